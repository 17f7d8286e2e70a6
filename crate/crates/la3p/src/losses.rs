//! Critic loss functions on the TD error and their derivatives.
//!
//! The losses are defined on `delta = y - Q`. Gradients returned here are
//! with respect to `delta`; the agent applies the `-1` factor when stepping
//! network parameters through `Q`.
//!
//! `huber` (kappa = 1) pairs with clipped prioritized sampling; `pal` is its
//! uniform-sampling mirror whose batch-mean gradient equals the
//! priority-weighted Huber gradient. `expected_gradient_identity_check`
//! evaluates both sides of that identity.

use crate::{Error, Result};

/// Critic loss selector. PAL evaluation additionally needs the batch-level
/// normalizer `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Huber1,
    Pal,
}

/// Squared-error loss `0.5 delta^2`; returns `(loss, dloss/ddelta)`.
pub fn mse(delta: f64) -> Result<(f64, f64)> {
    if !delta.is_finite() {
        return Err(Error::NonFinite("mse delta"));
    }
    Ok((0.5 * delta * delta, delta))
}

/// Huber loss with kappa = 1; returns `(loss, dloss/ddelta)`.
///
/// Quadratic for `|delta| <= 1` (boundary included), absolute otherwise.
pub fn huber(delta: f64) -> Result<(f64, f64)> {
    if !delta.is_finite() {
        return Err(Error::NonFinite("huber delta"));
    }
    if delta.abs() <= 1.0 {
        Ok((0.5 * delta * delta, delta))
    } else {
        Ok((delta.abs(), delta.signum()))
    }
}

/// Batch normalizer `xi = sum_j max(|delta_j|^alpha, 1) / N`.
pub fn pal_xi(deltas: &[f64], alpha: f64) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum = 0.0;
    for &d in deltas {
        if !d.is_finite() {
            return Err(Error::NonFinite("pal_xi delta"));
        }
        sum += d.abs().powf(alpha).max(1.0);
    }
    Ok(sum / deltas.len() as f64)
}

/// Prioritized Approximate Loss; returns `(loss, dloss/ddelta)`.
///
/// `loss = (1/xi) * 0.5 delta^2` for `|delta| <= 1`, otherwise
/// `(1/xi) * |delta|^(1+alpha) / (1+alpha)`.
pub fn pal(delta: f64, xi: f64, alpha: f64) -> Result<(f64, f64)> {
    if !delta.is_finite() {
        return Err(Error::NonFinite("pal delta"));
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::InvalidNormalizer(xi));
    }
    let a = delta.abs();
    if a <= 1.0 {
        Ok((0.5 * delta * delta / xi, delta / xi))
    } else {
        Ok((
            a.powf(1.0 + alpha) / ((1.0 + alpha) * xi),
            delta.signum() * a.powf(alpha) / xi,
        ))
    }
}

/// Evaluates both sides of the LAP/PAL expected-gradient identity on one
/// batch: the left side is the clip-prioritized expectation of the Huber
/// gradient, the right side the uniform expectation of the PAL gradient.
/// The two are algebraically equal; callers assert `lhs == rhs`.
pub fn expected_gradient_identity_check(deltas: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if deltas.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = deltas.len() as f64;
    let xi = pal_xi(deltas, alpha)?;
    let priority_sum: f64 = deltas.iter().map(|d| d.abs().powf(alpha).max(1.0)).sum();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for &d in deltas {
        let q = d.abs().powf(alpha).max(1.0) / priority_sum;
        lhs += q * huber(d)?.1;
        rhs += pal(d, xi, alpha)?.1 / n;
    }
    Ok((lhs, rhs))
}

/// The prioritization bias measure `rho + alpha - alpha * beta` for the loss
/// family `(1/rho) |delta|^rho`; the objective is unbiased only when the
/// value equals 2.
pub fn bias_condition(rho: f64, alpha: f64, beta: f64) -> f64 {
    rho + alpha - alpha * beta
}
