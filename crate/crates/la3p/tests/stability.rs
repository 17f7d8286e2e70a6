//! Long-horizon stability: 1e4 update steps on every (env, scheme) pair
//! complete without a non-finite value anywhere. Networks are kept small so
//! the grid stays cheap; any NaN aborts the update step with an error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use la3p::agent::{Agent, AgentConfig, SamplerScheme};
use la3p::env::{Env, EnvKind};
use la3p::replay::{ReplayBuffer, Transition};

fn run_pair(env_kind: EnvKind, scheme: SamplerScheme, updates: usize) {
    let spec = *Env::new(env_kind).spec();
    let mut cfg = AgentConfig::desk(spec.state_dim, spec.action_dim, spec.action_high, scheme);
    cfg.hidden = vec![16, 16];
    cfg.batch_size = 16;
    cfg.start_steps = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agent = Agent::new(cfg, &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(
        4096,
        spec.state_dim,
        spec.action_dim,
        scheme.priority_mode(),
        0.4,
        0.4,
        updates,
        1e-4,
    )
    .unwrap();
    let mut env = Env::new(env_kind);
    let mut episode = 0u64;
    let mut obs = env.reset(episode);

    let warmup = 256;
    let mut performed = 0usize;
    let mut t = 0u64;
    while performed < updates {
        t += 1;
        let action = agent.select_action(&obs, true, &mut rng).unwrap();
        let step = env.step(&action).unwrap();
        buffer
            .push(Transition {
                state: obs,
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                done: step.done,
            })
            .unwrap();
        obs = step.next_state;
        if step.done {
            episode += 1;
            obs = env.reset(episode);
        }
        if t > warmup {
            agent
                .update_step(&mut buffer, &mut rng)
                .unwrap_or_else(|e| panic!("{env_kind:?}/{scheme:?} update {performed}: {e}"));
            performed += 1;
            if performed % 2500 == 0 {
                let a = agent.select_action(&obs, false, &mut rng).unwrap();
                assert!(
                    a.iter().all(|v| v.is_finite()),
                    "{env_kind:?}/{scheme:?} produced non-finite action at update {performed}"
                );
            }
        }
    }
    let a = agent.select_action(&obs, false, &mut rng).unwrap();
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn no_nan_over_ten_thousand_updates_on_every_pair() {
    let envs = [
        EnvKind::PointMass1d,
        EnvKind::PointMass2d,
        EnvKind::PendulumSwingUp,
        EnvKind::AnalyticBandit,
    ];
    let schemes = [
        SamplerScheme::Uniform,
        SamplerScheme::ClassicPer,
        SamplerScheme::Lap,
        SamplerScheme::La3p { lambda: 0.5 },
    ];
    let pairs: Vec<(EnvKind, SamplerScheme)> = envs
        .iter()
        .flat_map(|&e| schemes.iter().map(move |&s| (e, s)))
        .collect();
    pairs
        .par_iter()
        .for_each(|&(env, scheme)| run_pair(env, scheme, 10_000));
}
