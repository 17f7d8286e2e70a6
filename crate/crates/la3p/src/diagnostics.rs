//! Numerical probes relating TD errors to Q-estimation error and to the
//! divergence between approximate and true policy gradients, measured on the
//! one-step bandit where the exact Q-function is available in closed form.
//!
//! With a one-step horizon (discount zero) the TD error collapses to the
//! estimation error, so `|delta| = |Q - Q^pi|` holds exactly. A chained
//! two-step variant (discount 0.99) breaks the equality; there only positive
//! rank correlation is claimed or asserted. The policy-gradient probe
//! computes the deterministic policy gradient through a critic and through
//! the exact Q-function and reports the norm of the difference: it is
//! exactly zero for a perfect critic, still zero under a constant critic
//! offset (constant errors vanish under the action derivative), and grows
//! with action-dependent critic error.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{bandit_optimal_q, bandit_optimal_q_grad, Env, EnvKind};
use crate::nn::{AdamState, Gradients, Head, Matrix, Mlp};
use crate::stats;
use crate::{Error, Result};

/// Minimum pair count for reported correlations.
pub const MIN_PAIRS: usize = 100;

/// A differentiable action-value estimate.
pub trait CriticFn {
    fn q(&self, state: &[f64], action: &[f64]) -> f64;
    fn dq_da(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
}

/// An [`Mlp`] with input `[state, action]` viewed as a critic.
pub struct MlpCritic<'a> {
    pub net: &'a Mlp,
    pub state_dim: usize,
}

impl CriticFn for MlpCritic<'_> {
    fn q(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        self.net.forward_single(&x).unwrap()[0]
    }

    fn dq_da(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        let m = Matrix::from_rows(&[x]).unwrap();
        let (_, cache) = self.net.forward(&m).unwrap();
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let dx = self.net.backward_input(&cache, &one).unwrap();
        dx.data[self.state_dim..].to_vec()
    }
}

/// The exact bandit Q-function used as a perfect critic.
pub struct ExactBanditCritic;

impl CriticFn for ExactBanditCritic {
    fn q(&self, state: &[f64], action: &[f64]) -> f64 {
        bandit_optimal_q(state, action[0])
    }

    fn dq_da(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        vec![bandit_optimal_q_grad(state, action[0])]
    }
}

/// Adds a constant offset to a critic; a negative control, since constant
/// estimation error cannot move the policy gradient.
pub struct BiasedCritic<C: CriticFn> {
    pub base: C,
    pub bias: f64,
}

impl<C: CriticFn> CriticFn for BiasedCritic<C> {
    fn q(&self, state: &[f64], action: &[f64]) -> f64 {
        self.base.q(state, action) + self.bias
    }

    fn dq_da(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.base.dq_da(state, action)
    }
}

/// Exact bandit Q plus an action-dependent error `m(s) * a` whose magnitude
/// `m(s) = scale * exp(2 s_0)` varies widely across contexts.
pub struct ActionErrorCritic {
    pub scale: f64,
}

impl ActionErrorCritic {
    fn magnitude(&self, state: &[f64]) -> f64 {
        self.scale * (2.0 * state[0]).exp()
    }
}

impl CriticFn for ActionErrorCritic {
    fn q(&self, state: &[f64], action: &[f64]) -> f64 {
        bandit_optimal_q(state, action[0]) + self.magnitude(state) * action[0]
    }

    fn dq_da(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        vec![bandit_optimal_q_grad(state, action[0]) + self.magnitude(state)]
    }
}

/// One probe row; estimation-error probes fill the `est` columns, gradient
/// probes the `div` columns.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbePair {
    pub abs_td: f64,
    pub abs_est_err_t: f64,
    pub abs_est_err_t1: f64,
    pub grad_div_t: f64,
    pub grad_div_t1: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ColumnCorrelation {
    pub pearson: f64,
    pub spearman: f64,
    /// One-sided p-value for spearman > 0.
    pub spearman_pvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub pairs_count: usize,
    pub est_err_t: ColumnCorrelation,
    pub est_err_t1: ColumnCorrelation,
    pub grad_div_t: ColumnCorrelation,
    pub grad_div_t1: ColumnCorrelation,
    #[serde(skip)]
    pub pairs: Vec<ProbePair>,
}

impl ProbeReport {
    /// Correlates `abs_td` against every divergence column. Requires at
    /// least [`MIN_PAIRS`] rows, all finite.
    pub fn from_pairs(pairs: Vec<ProbePair>) -> Result<Self> {
        if pairs.len() < MIN_PAIRS {
            return Err(Error::TooFewPairs {
                got: pairs.len(),
                need: MIN_PAIRS,
            });
        }
        for p in &pairs {
            let vals = [
                p.abs_td,
                p.abs_est_err_t,
                p.abs_est_err_t1,
                p.grad_div_t,
                p.grad_div_t1,
            ];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("probe pair"));
            }
        }
        let td: Vec<f64> = pairs.iter().map(|p| p.abs_td).collect();
        let col = |f: fn(&ProbePair) -> f64| -> Result<ColumnCorrelation> {
            let ys: Vec<f64> = pairs.iter().map(f).collect();
            let spearman = stats::spearman(&td, &ys)?;
            Ok(ColumnCorrelation {
                pearson: stats::pearson(&td, &ys)?,
                spearman,
                spearman_pvalue: stats::positive_correlation_pvalue(spearman, pairs.len())?,
            })
        };
        Ok(Self {
            pairs_count: pairs.len(),
            est_err_t: col(|p| p.abs_est_err_t)?,
            est_err_t1: col(|p| p.abs_est_err_t1)?,
            grad_div_t: col(|p| p.grad_div_t)?,
            grad_div_t1: col(|p| p.grad_div_t1)?,
            pairs,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "abs_td,abs_est_err_t,abs_est_err_t1,grad_div_t,grad_div_t1")?;
        for p in &self.pairs {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.abs_td, p.abs_est_err_t, p.abs_est_err_t1, p.grad_div_t, p.grad_div_t1
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn require_bandit(env: &Env) -> Result<()> {
    if env.kind() != EnvKind::AnalyticBandit {
        return Err(Error::WrongEnvKind { required: "bandit" });
    }
    Ok(())
}

/// One-step estimation-error probe: with a single-step horizon the target is
/// the realized reward, so `|delta| = |Q - Q^pi|` holds exactly. Returns
/// `(abs_td, abs_est_err)` per pair.
pub fn estimation_error_probe<C: CriticFn>(
    critic: &C,
    env: &Env,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>> {
    require_bandit(env)?;
    if states.len() != actions.len() {
        return Err(Error::ShapeMismatch("estimation_error_probe"));
    }
    let mut out = Vec::with_capacity(states.len());
    for (s, a) in states.iter().zip(actions) {
        let reward = env.optimal_q(s, a)?;
        let q = critic.q(s, a);
        let delta = reward - q;
        let est = (q - reward).abs();
        out.push((delta.abs(), est));
    }
    Ok(out)
}

/// Two-step chained variant: the context re-draws once before terminating,
/// so `delta = x + gamma * y` mixes the estimation errors of both steps and
/// only correlation (not equality) is expected. Returns full probe rows with
/// gradient divergences evaluated at both states.
pub fn chained_probe<C: CriticFn>(
    critic: &C,
    actor: &Mlp,
    env: &Env,
    n: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ProbePair>> {
    require_bandit(env)?;
    let state_dim = env.spec().state_dim;
    let draw_state = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..state_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    };
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let s_t = draw_state(rng);
        let a_t = vec![rng.random_range(-1.0..=1.0)];
        let r_t = bandit_optimal_q(&s_t, a_t[0]);
        let s_t1 = draw_state(rng);
        let a_t1 = actor.forward_single(&s_t1)?;

        let q_t = critic.q(&s_t, &a_t);
        let q_t1 = critic.q(&s_t1, &a_t1);
        let delta = r_t + gamma * q_t1 - q_t;

        let q_true_t1 = bandit_optimal_q(&s_t1, a_t1[0]);
        let q_true_t = r_t + gamma * q_true_t1;

        pairs.push(ProbePair {
            abs_td: delta.abs(),
            abs_est_err_t: (q_t - q_true_t).abs(),
            abs_est_err_t1: (q_t1 - q_true_t1).abs(),
            grad_div_t: policy_gradient_divergence(actor, critic, &s_t)?,
            grad_div_t1: policy_gradient_divergence(actor, critic, &s_t1)?,
        });
    }
    Ok(pairs)
}

/// Norm of the gap between the deterministic policy gradient computed
/// through `critic` and through the exact bandit Q, at one state.
pub fn policy_gradient_divergence<C: CriticFn>(
    actor: &Mlp,
    critic: &C,
    state: &[f64],
) -> Result<f64> {
    let (g, g_true) = deterministic_policy_gradients(actor, critic, state)?;
    Ok(l2_gap(&g, &g_true))
}

/// The pair of gradients behind [`policy_gradient_divergence`].
pub fn deterministic_policy_gradients<C: CriticFn>(
    actor: &Mlp,
    critic: &C,
    state: &[f64],
) -> Result<(Gradients, Gradients)> {
    let m = Matrix::from_rows(&[state.to_vec()])?;
    let (action, cache) = actor.forward(&m)?;
    let dq = critic.dq_da(state, &action.data);
    let dq_true = vec![bandit_optimal_q_grad(state, action.data[0])];
    let (g, _) = actor.backward(&cache, &Matrix::from_rows(&[dq])?)?;
    let (g_true, _) = actor.backward(&cache, &Matrix::from_rows(&[dq_true])?)?;
    Ok((g, g_true))
}

/// `(abs_td, divergence)` rows for the deterministic policy-gradient probe,
/// with the TD error taken at the actor's own action.
pub fn gradient_divergence_probe<C: CriticFn>(
    actor: &Mlp,
    critic: &C,
    env: &Env,
    states: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>> {
    require_bandit(env)?;
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        let a = actor.forward_single(s)?;
        let reward = env.optimal_q(s, &a)?;
        let delta = reward - critic.q(s, &a);
        out.push((delta.abs(), policy_gradient_divergence(actor, critic, s)?));
    }
    Ok(out)
}

/// Gap between expected softmax-policy gradients over a discrete action
/// grid, computed under `critic` and under the exact bandit Q. The policy
/// net maps a state to one logit per grid action.
pub fn softmax_gradient_divergence<C: CriticFn>(
    policy: &Mlp,
    critic: &C,
    state: &[f64],
    action_grid: &[f64],
) -> Result<f64> {
    if policy.output_dim() != action_grid.len() {
        return Err(Error::ShapeMismatch("softmax policy grid"));
    }
    let m = Matrix::from_rows(&[state.to_vec()])?;
    let (logits, cache) = policy.forward(&m)?;
    let max = logits.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data.iter().map(|&z| (z - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / z).collect();

    // d/dlogit_j of sum_k pi_k Q_k = pi_j (Q_j - sum_k pi_k Q_k).
    let grad_for = |qs: &[f64]| -> Result<Gradients> {
        let mean: f64 = probs.iter().zip(qs).map(|(p, q)| p * q).sum();
        let out: Vec<f64> = probs
            .iter()
            .zip(qs)
            .map(|(p, q)| p * (q - mean))
            .collect();
        let (g, _) = policy.backward(&cache, &Matrix::from_rows(&[out])?)?;
        Ok(g)
    };
    let qs: Vec<f64> = action_grid.iter().map(|&a| critic.q(state, &[a])).collect();
    let qs_true: Vec<f64> = action_grid
        .iter()
        .map(|&a| bandit_optimal_q(state, a))
        .collect();
    Ok(l2_gap(&grad_for(&qs)?, &grad_for(&qs_true)?))
}

fn l2_gap(a: &Gradients, b: &Gradients) -> f64 {
    let fa = a.to_flat();
    let fb = b.to_flat();
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fits a small critic to the exact bandit Q by supervised regression and
/// stops early, leaving a realistic mid-training estimation error.
pub fn train_midway_critic(seed: u64, steps: usize) -> Result<Mlp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(&[3, 32, 32, 1], Head::Linear, &mut rng)?;
    let mut opt = AdamState::new(&net, 3e-4);
    for _ in 0..steps {
        let batch = 64;
        let mut x = Matrix::zeros(batch, 3);
        let mut y = vec![0.0; batch];
        for r in 0..batch {
            let s = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let a = rng.random_range(-1.0..=1.0);
            x.row_mut(r).copy_from_slice(&[s[0], s[1], a]);
            y[r] = bandit_optimal_q(&s, a);
        }
        let (out, cache) = net.forward(&x)?;
        let mut grad = Matrix::zeros(batch, 1);
        for r in 0..batch {
            grad.data[r] = (out.data[r] - y[r]) / batch as f64;
        }
        let (grads, _) = net.backward(&cache, &grad)?;
        net.adam_step(&mut opt, &grads)?;
    }
    Ok(net)
}

fn random_states(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Full estimation-error report: a partially trained critic probed on the
/// two-step chained construction, where the one-step identity no longer
/// forces equality and correlations carry the signal.
pub fn lemma1_report(n: usize, seed: u64) -> Result<ProbeReport> {
    let env = Env::new(EnvKind::AnalyticBandit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = train_midway_critic(seed ^ 0xC11, 300)?;
    let mut actor_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC7);
    let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut actor_rng)?;
    let pairs = chained_probe(
        &MlpCritic {
            net: &critic,
            state_dim: 2,
        },
        &actor,
        &env,
        n,
        0.99,
        &mut rng,
    )?;
    ProbeReport::from_pairs(pairs)
}

/// Full gradient-divergence report under an action-dependent injected
/// critic error.
pub fn theorem1_report(n: usize, seed: u64) -> Result<ProbeReport> {
    let env = Env::new(EnvKind::AnalyticBandit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC7);
    let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut actor_rng)?;
    let critic = ActionErrorCritic { scale: 0.5 };
    let states = random_states(n, 2, &mut rng);
    let rows = gradient_divergence_probe(&actor, &critic, &env, &states)?;
    let pairs: Vec<ProbePair> = rows
        .iter()
        .map(|&(abs_td, div)| ProbePair {
            abs_td,
            abs_est_err_t: abs_td, // one-step identity
            abs_est_err_t1: 0.0,
            grad_div_t: div,
            grad_div_t1: 0.0,
        })
        .collect();
    ProbeReport::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandit() -> Env {
        Env::new(EnvKind::AnalyticBandit)
    }

    fn states_and_actions(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = random_states(n, 2, &mut rng);
        let actions = (0..n)
            .map(|_| vec![rng.random_range(-1.0..=1.0)])
            .collect();
        (states, actions)
    }

    #[test]
    fn one_step_identity_is_exact() {
        let critic = train_midway_critic(1, 100).unwrap();
        let critic = MlpCritic {
            net: &critic,
            state_dim: 2,
        };
        let (states, actions) = states_and_actions(500, 2);
        let rows = estimation_error_probe(&critic, &bandit(), &states, &actions).unwrap();
        for (abs_td, est) in rows {
            assert_eq!(abs_td, est);
        }
    }

    #[test]
    fn perfect_critic_has_zero_td_error() {
        let (states, actions) = states_and_actions(200, 3);
        let rows =
            estimation_error_probe(&ExactBanditCritic, &bandit(), &states, &actions).unwrap();
        for (abs_td, est) in rows {
            assert_eq!(abs_td, 0.0);
            assert_eq!(est, 0.0);
        }
    }

    #[test]
    fn probe_rejects_non_bandit_env() {
        let env = Env::new(EnvKind::PointMass1d);
        let (states, actions) = states_and_actions(10, 4);
        assert!(matches!(
            estimation_error_probe(&ExactBanditCritic, &env, &states, &actions),
            Err(Error::WrongEnvKind { .. })
        ));
    }

    #[test]
    fn perfect_critic_gives_exactly_zero_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut rng).unwrap();
        let states = random_states(200, 2, &mut rng);
        let rows =
            gradient_divergence_probe(&actor, &ExactBanditCritic, &bandit(), &states).unwrap();
        for (_, div) in rows {
            assert_eq!(div, 0.0);
        }
    }

    #[test]
    fn constant_bias_cannot_move_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut rng).unwrap();
        let critic = BiasedCritic {
            base: ExactBanditCritic,
            bias: 3.7,
        };
        let states = random_states(200, 2, &mut rng);
        let rows = gradient_divergence_probe(&actor, &critic, &bandit(), &states).unwrap();
        for (abs_td, div) in rows {
            assert_eq!(div, 0.0);
            assert!((abs_td - 3.7).abs() < 1e-12);
        }
    }

    #[test]
    fn action_dependent_error_diverges_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut rng).unwrap();
        let critic = ActionErrorCritic { scale: 0.5 };
        let states = random_states(1000, 2, &mut rng);
        let rows = gradient_divergence_probe(&actor, &critic, &bandit(), &states).unwrap();
        let td: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let div: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let rho = stats::spearman(&td, &div).unwrap();
        let p = stats::positive_correlation_pvalue(rho, rows.len()).unwrap();
        assert!(rho > 0.0, "spearman {rho}");
        assert!(p < 0.01, "p {p}");
    }

    #[test]
    fn softmax_variant_zero_under_perfect_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        let policy = Mlp::new(&[2, 16, 9], Head::Linear, &mut rng).unwrap();
        for s in random_states(100, 2, &mut rng) {
            let div =
                softmax_gradient_divergence(&policy, &ExactBanditCritic, &s, &grid).unwrap();
            assert_eq!(div, 0.0);
        }
        // And nonzero under an action-dependent error.
        let critic = ActionErrorCritic { scale: 0.5 };
        let mut any_positive = false;
        for s in random_states(20, 2, &mut rng) {
            if softmax_gradient_divergence(&policy, &critic, &s, &grid).unwrap() > 0.0 {
                any_positive = true;
            }
        }
        assert!(any_positive);
    }

    #[test]
    fn chained_probe_correlates_but_does_not_equal() {
        let env = bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let critic = train_midway_critic(10, 200).unwrap();
        let mut actor_rng = ChaCha8Rng::seed_from_u64(11);
        let actor = Mlp::new(&[2, 16, 1], Head::Tanh { scale: 1.0 }, &mut actor_rng).unwrap();
        let pairs = chained_probe(
            &MlpCritic {
                net: &critic,
                state_dim: 2,
            },
            &actor,
            &env,
            1000,
            0.99,
            &mut rng,
        )
        .unwrap();
        let report = ProbeReport::from_pairs(pairs).unwrap();
        assert!(report.est_err_t.spearman > 0.0);
        assert!(report.est_err_t.spearman_pvalue < 0.01);
        // The two-step mixing breaks the exact identity.
        assert!(report
            .pairs
            .iter()
            .any(|p| (p.abs_td - p.abs_est_err_t).abs() > 1e-6));
    }

    #[test]
    fn probe_determinism() {
        let a = lemma1_report(500, 42).unwrap();
        let b = lemma1_report(500, 42).unwrap();
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(x.abs_td, y.abs_td);
            assert_eq!(x.grad_div_t, y.grad_div_t);
        }
    }

    #[test]
    fn report_requires_enough_pairs() {
        let pairs = vec![
            ProbePair {
                abs_td: 1.0,
                abs_est_err_t: 1.0,
                abs_est_err_t1: 0.0,
                grad_div_t: 0.0,
                grad_div_t1: 0.0,
            };
            MIN_PAIRS - 1
        ];
        assert!(matches!(
            ProbeReport::from_pairs(pairs),
            Err(Error::TooFewPairs { .. })
        ));
    }

    #[test]
    fn csv_schema() {
        let report = theorem1_report(120, 1).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("abs_td,abs_est_err_t,abs_est_err_t1,grad_div_t,grad_div_t1\n"));
        assert_eq!(text.lines().count(), 121);
        assert!(report.summary_json().unwrap().contains("spearman"));
    }
}
