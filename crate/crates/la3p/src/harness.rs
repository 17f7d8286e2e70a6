//! Experiment runner: seeded training loops over (scheme, env, seed) grids,
//! periodic deterministic evaluation, per-run CSV learning curves, aggregate
//! JSON summaries, run-time tables, and the uniform-fraction sweep.
//!
//! Every run is a pure function of its config and seed; evaluation uses a
//! separate environment seeded at `training seed + 100` so each evaluation
//! pass replays the same set of start states. Result files are written to a
//! temp path and renamed into place. Wall-clock columns are the only
//! non-reproducible bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{Agent, SamplerScheme};
use crate::config::RunConfig;
use crate::env::Env;
use crate::replay::{ReplayBuffer, Transition};
use crate::stats;
use crate::{Error, Result};

/// One evaluation point of one run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub wall_clock_ms: u64,
}

/// A completed single-seed run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheme: String,
    pub env: String,
    pub seed: u64,
    pub records: Vec<EvalRecord>,
    pub total_wall_ms: u64,
}

impl RunResult {
    /// Mean return over the final ten evaluations (or all of them when the
    /// run is shorter).
    pub fn last10_mean(&self) -> f64 {
        let n = self.records.len();
        if n == 0 {
            return f64::NAN;
        }
        let tail = &self.records[n.saturating_sub(10)..];
        tail.iter().map(|r| r.mean_return).sum::<f64>() / tail.len() as f64
    }
}

/// Aggregate over the seeds of one (scheme, env) cell.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scheme: String,
    pub env: String,
    pub lambda: f64,
    pub alpha: f64,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub last10_mean_per_seed: Vec<f64>,
    pub mean_last10: f64,
    pub ci95_last10: f64,
    pub wall_clock_ms_per_seed: Vec<u64>,
}

/// Derives a stream seed that separates episodes, components, and runs.
fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut x = base
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add(index);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x
}

/// Mean return of `episodes` deterministic-policy episodes on a fresh
/// evaluation environment.
pub fn evaluate(
    agent: &mut Agent,
    env_kind: crate::env::EnvKind,
    eval_seed: u64,
    episodes: usize,
) -> Result<f64> {
    let mut env = Env::new(env_kind);
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut obs = env.reset(derive_seed(eval_seed, 7, ep as u64));
        loop {
            let action = agent.select_action(&obs, false, &mut rng)?;
            let step = env.step(&action)?;
            total += step.reward;
            obs = step.next_state;
            if step.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Trains one seed to completion and returns its evaluation trace.
pub fn train_single(config: &RunConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let scheme = config.sampler_scheme();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let mut run_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let mut agent = Agent::new(config.agent_config(), &mut init_rng)?;
    let spec = crate::env::EnvSpec::for_kind(config.env);
    let mut buffer = ReplayBuffer::new(
        config.buffer_capacity,
        spec.state_dim,
        spec.action_dim,
        scheme.priority_mode(),
        config.resolved_alpha(),
        config.beta,
        config.total_steps,
        config.mu,
    )?;
    let mut env = Env::new(config.env);
    let eval_seed = seed + 100;

    let started = Instant::now();
    let mut episode = 0u64;
    let mut obs = env.reset(derive_seed(seed, 3, episode));
    let mut records = Vec::new();

    for t in 1..=config.total_steps {
        let action = agent.select_action(&obs, true, &mut run_rng)?;
        let step = env.step(&action)?;
        buffer.push(Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
        })?;
        obs = step.next_state;
        if step.done {
            episode += 1;
            obs = env.reset(derive_seed(seed, 3, episode));
        }

        if t > config.start_steps && buffer.count() >= config.batch {
            agent.update_step(&mut buffer, &mut run_rng)?;
        }

        if t % config.eval_every == 0 {
            let mean_return = evaluate(&mut agent, config.env, eval_seed, config.eval_episodes)?;
            records.push(EvalRecord {
                step: t,
                seed,
                mean_return,
                wall_clock_ms: started.elapsed().as_millis() as u64,
            });
        }
    }

    Ok(RunResult {
        scheme: scheme.name().to_string(),
        env: config.env.name().to_string(),
        seed,
        records,
        total_wall_ms: started.elapsed().as_millis() as u64,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn run_csv_path(out: &Path, scheme: &str, env: &str, seed: u64) -> PathBuf {
    out.join(format!("{scheme}_{env}_seed{seed}.csv"))
}

pub fn summary_json_path(out: &Path, scheme: &str, env: &str) -> PathBuf {
    out.join(format!("{scheme}_{env}_summary.json"))
}

fn write_run_csv(out: &Path, result: &RunResult) -> Result<PathBuf> {
    let path = run_csv_path(out, &result.scheme, &result.env, result.seed);
    let mut text = String::from("step,seed,mean_return,wall_clock_ms\n");
    for r in &result.records {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.step, r.seed, r.mean_return, r.wall_clock_ms
        ));
    }
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Runs the configured seeds in parallel, writes one CSV per seed plus an
/// aggregate summary JSON, and returns the aggregate.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let seeds: Vec<u64> = (0..config.seeds as u64).map(|i| config.seed + i).collect();
    let results: Result<Vec<RunResult>> = seeds
        .par_iter()
        .map(|&seed| {
            let result = train_single(config, seed)?;
            write_run_csv(&config.out, &result)?;
            Ok(result)
        })
        .collect();
    let results = results?;

    let last10: Vec<f64> = results.iter().map(|r| r.last10_mean()).collect();
    let (mean, ci) = stats::mean_ci95(&last10)?;
    let summary = RunSummary {
        scheme: results[0].scheme.clone(),
        env: results[0].env.clone(),
        lambda: config.lambda,
        alpha: config.resolved_alpha(),
        total_steps: config.total_steps,
        seeds,
        last10_mean_per_seed: last10,
        mean_last10: mean,
        ci95_last10: ci,
        wall_clock_ms_per_seed: results.iter().map(|r| r.total_wall_ms).collect(),
    };
    let path = summary_json_path(&config.out, &summary.scheme, &summary.env);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub scheme: String,
    pub mean_ms: f64,
    pub ci95_ms: f64,
    pub pct_over_uniform: f64,
}

/// Aggregates total run times from the summary files in `out`, normalized
/// against the uniform baseline.
pub fn timing_report(out: &Path) -> Result<Vec<TimingRow>> {
    let mut per_scheme: Vec<(String, Vec<f64>)> = Vec::new();
    if out.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(out)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with("_summary.json"))
            })
            .collect();
        entries.sort();
        for path in entries {
            let text = fs::read_to_string(&path)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            let scheme = value["scheme"].as_str().unwrap_or_default().to_string();
            let times: Vec<f64> = value["wall_clock_ms_per_seed"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
                .unwrap_or_default();
            if scheme.is_empty() || times.is_empty() {
                continue;
            }
            match per_scheme.iter_mut().find(|(s, _)| *s == scheme) {
                Some((_, v)) => v.extend(times),
                None => per_scheme.push((scheme, times)),
            }
        }
    }
    if per_scheme.is_empty() {
        return Err(Error::MissingRuns(out.display().to_string()));
    }
    let uniform_mean = per_scheme
        .iter()
        .find(|(s, _)| s == "uniform")
        .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
        .ok_or_else(|| Error::MissingRuns(format!("{} (no uniform baseline)", out.display())))?;
    let mut rows = Vec::new();
    for (scheme, times) in per_scheme {
        let (mean, ci) = stats::mean_ci95(&times)?;
        rows.push(TimingRow {
            scheme,
            mean_ms: mean,
            ci95_ms: ci,
            pct_over_uniform: (mean / uniform_mean - 1.0) * 100.0,
        });
    }
    rows.sort_by(|a, b| a.mean_ms.partial_cmp(&b.mean_ms).unwrap());
    Ok(rows)
}

pub fn format_timing_table(rows: &[TimingRow]) -> String {
    let mut s = String::from("scheme     mean_ms      ci95_ms     vs_uniform\n");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:<12.2} {:<12.2} {:+.2}%\n",
            r.scheme, r.mean_ms, r.ci95_ms, r.pct_over_uniform
        ));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_last10: f64,
    pub ci95_last10: f64,
}

/// Runs the uniform-fraction sweep and writes `lambda_sweep.csv` (ascending
/// by lambda) into the output directory.
pub fn lambda_sweep(config: &RunConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("empty lambda list".into()));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::new();
    for &lambda in &sorted {
        let mut cfg = config.clone();
        cfg.scheme = crate::config::SchemeKind::La3p;
        cfg.lambda = lambda;
        cfg.out = config.out.join(format!("lambda_{lambda}"));
        let summary = run(&cfg)?;
        rows.push(SweepRow {
            lambda,
            mean_last10: summary.mean_last10,
            ci95_last10: summary.ci95_last10,
        });
    }
    let mut csv = String::from("lambda,mean_last10,ci95_last10\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.lambda, r.mean_last10, r.ci95_last10));
    }
    fs::create_dir_all(&config.out)?;
    write_atomic(&config.out.join("lambda_sweep.csv"), csv.as_bytes())?;
    Ok(rows)
}

/// Mean wall-clock milliseconds per update step for one scheme at one
/// buffer capacity, on a synthetic workload with small networks. Used for
/// the run-time shape checks.
pub fn bench_update_step_ms(
    scheme: SamplerScheme,
    capacity: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = crate::agent::AgentConfig::desk(3, 1, 1.0, scheme);
    cfg.hidden = vec![32, 32];
    cfg.batch_size = 64;
    let mut agent = Agent::new(cfg, &mut rng)?;
    let mut buffer = ReplayBuffer::new(
        capacity,
        3,
        1,
        scheme.priority_mode(),
        0.4,
        0.4,
        steps,
        1e-4,
    )?;
    for _ in 0..capacity {
        buffer.push(Transition {
            state: vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            action: vec![rng.random_range(-1.0..1.0)],
            reward: rng.random_range(-2.0..2.0),
            next_state: vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            done: false,
        })?;
    }
    // A few warm-up steps spread the priorities and touch the caches.
    for _ in 0..5 {
        agent.update_step(&mut buffer, &mut rng)?;
    }
    let started = Instant::now();
    for _ in 0..steps {
        agent.update_step(&mut buffer, &mut rng)?;
    }
    Ok(started.elapsed().as_secs_f64() * 1000.0 / steps as f64)
}
