use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use la3p::config::{parse_lambdas, RunConfig, SchemeKind};
use la3p::env::EnvKind;
use la3p::harness;
use la3p::{diagnostics, Error};

/// Experience-replay prioritization experiments on toy continuous-control
/// tasks: training runs over (scheme, env, seed) grids, run-time tables,
/// uniform-fraction sweeps, and analytic diagnostics probes.
#[derive(Parser, Debug)]
#[command(name = "la3p", version, about)]
struct Cli {
    /// Environment: point_mass_1d, point_mass_2d, pendulum, bandit.
    #[arg(long)]
    env: Option<String>,
    /// Sampling scheme: uniform, per, lap, la3p.
    #[arg(long)]
    scheme: Option<String>,
    /// Uniform fraction for la3p; a comma-separated list runs a sweep.
    #[arg(long)]
    lambda: Option<String>,
    /// Priority exponent (defaults: 0.6 for per, 0.4 otherwise).
    #[arg(long)]
    alpha: Option<f64>,
    /// Importance-sampling exponent start value (classic PER).
    #[arg(long)]
    beta: Option<f64>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds; runs use seed .. seed + N.
    #[arg(long)]
    seeds: Option<usize>,
    /// Total environment steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Initial random-exploration steps before training starts.
    #[arg(long = "start-steps")]
    start_steps: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Evaluation cadence, in environment steps.
    #[arg(long = "eval-every")]
    eval_every: Option<usize>,
    /// Episodes per evaluation.
    #[arg(long = "eval-episodes")]
    eval_episodes: Option<usize>,
    /// Output directory for CSV/JSON results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Switch all defaults to the full-scale hyper-parameters.
    #[arg(long = "paper-scale")]
    paper_scale: bool,
    /// Run a diagnostics probe instead of training: lemma1 or theorem1.
    #[arg(long)]
    probe: Option<String>,
    /// Aggregate run times from completed runs in the output directory.
    #[arg(long)]
    timing: bool,
    /// Replay buffer capacity.
    #[arg(long)]
    buffer: Option<usize>,
    /// Hidden layer widths, comma-separated.
    #[arg(long)]
    hidden: Option<String>,
}

fn main() -> ExitCode {
    match run_cli() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli() -> la3p::Result<()> {
    let cli = Cli::parse();
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if cli.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(v) = &cli.env {
        cfg.env = EnvKind::from_name(v)?;
    }
    if let Some(v) = &cli.scheme {
        cfg.scheme = SchemeKind::from_name(v)?;
    }
    if let Some(v) = cli.alpha {
        cfg.alpha = Some(v);
    }
    if let Some(v) = cli.beta {
        cfg.beta = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = cli.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = cli.start_steps {
        cfg.start_steps = v;
    }
    if let Some(v) = cli.batch {
        cfg.batch = v;
    }
    if let Some(v) = cli.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = cli.eval_episodes {
        cfg.eval_episodes = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    if let Some(v) = cli.buffer {
        cfg.buffer_capacity = v;
    }
    if let Some(v) = &cli.hidden {
        cfg.set_key("hidden", v)?;
    }
    let lambdas = match &cli.lambda {
        Some(v) => {
            let list = parse_lambdas(v)?;
            cfg.lambda = list[0];
            list
        }
        None => vec![cfg.lambda],
    };

    if let Some(probe) = &cli.probe {
        return run_probe(&cfg, probe);
    }
    if cli.timing {
        let rows = harness::timing_report(&cfg.out)?;
        print!("{}", harness::format_timing_table(&rows));
        let json = serde_json::to_string_pretty(&rows)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        std::fs::write(cfg.out.join("timing.json"), json)?;
        return Ok(());
    }

    if lambdas.len() > 1 {
        if cfg.scheme != SchemeKind::La3p {
            return Err(Error::InvalidConfig(
                "lambda sweeps require --scheme la3p".into(),
            ));
        }
        let rows = harness::lambda_sweep(&cfg, &lambdas)?;
        println!("lambda  mean_last10  ci95");
        for r in &rows {
            println!("{:<7} {:<12.4} {:.4}", r.lambda, r.mean_last10, r.ci95_last10);
        }
        return Ok(());
    }

    cfg.validate()?;
    let summary = harness::run(&cfg)?;
    println!(
        "{} on {}: last-10-eval mean {:.4} ± {:.4} over {} seed(s)",
        summary.scheme,
        summary.env,
        summary.mean_last10,
        summary.ci95_last10,
        summary.seeds.len()
    );
    println!("results in {}", cfg.out.display());
    Ok(())
}

fn run_probe(cfg: &RunConfig, probe: &str) -> la3p::Result<()> {
    let n = 1000;
    let report = match probe {
        "lemma1" => diagnostics::lemma1_report(n, cfg.seed)?,
        "theorem1" => diagnostics::theorem1_report(n, cfg.seed)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown probe '{other}' (expected lemma1 or theorem1)"
            )))
        }
    };
    std::fs::create_dir_all(&cfg.out)?;
    let csv_path = cfg.out.join(format!("probe_{probe}.csv"));
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    std::fs::write(&csv_path, csv)?;
    let json_path = cfg.out.join(format!("probe_{probe}.json"));
    std::fs::write(&json_path, report.summary_json()?)?;
    println!(
        "{probe}: {} pairs; spearman(|td|, est_t) = {:.4} (p = {:.2e}), spearman(|td|, grad_div_t) = {:.4} (p = {:.2e})",
        report.pairs_count,
        report.est_err_t.spearman,
        report.est_err_t.spearman_pvalue,
        report.grad_div_t.spearman,
        report.grad_div_t.spearman_pvalue,
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}
