//! Small statistics helpers shared by the diagnostics module, the harness,
//! and the verification tests: chi-square goodness of fit, Pearson/Spearman
//! correlation with a one-sided significance test, Student-t confidence
//! intervals, and least-squares line fitting.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Chi-square goodness-of-fit p-value of observed counts against expected
/// cell probabilities. Zero-probability cells must have zero observations.
pub fn chi_square_pvalue(observed: &[u64], expected_probs: &[f64]) -> Result<f64> {
    if observed.is_empty() || observed.len() != expected_probs.len() {
        return Err(Error::ShapeMismatch("chi_square_pvalue"));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut statistic = 0.0;
    let mut dof = -1i64;
    for (&obs, &p) in observed.iter().zip(expected_probs) {
        if p <= 0.0 {
            if obs > 0 {
                return Err(Error::InvalidConfig(
                    "observation in zero-probability cell".into(),
                ));
            }
            continue;
        }
        let expected = p * n as f64;
        let diff = obs as f64 - expected;
        statistic += diff * diff / expected;
        dof += 1;
    }
    if dof < 1 {
        // Single support cell: the fit is exact by construction.
        return Ok(1.0);
    }
    let dist = ChiSquared::new(dof as f64)
        .map_err(|_| Error::InvalidConfig("chi-square dof".into()))?;
    Ok(1.0 - dist.cdf(statistic))
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("pearson"));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyBatch);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation (Pearson on mid-ranks, ties averaged).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

/// One-sided p-value for the hypothesis "correlation > 0", using the
/// t-approximation `t = r sqrt((n-2)/(1-r^2))` with `n - 2` degrees of
/// freedom.
pub fn positive_correlation_pvalue(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::EmptyBatch);
    }
    if r >= 1.0 {
        return Ok(0.0);
    }
    let dof = (n - 2) as f64;
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|_| Error::InvalidConfig("student-t dof".into()))?;
    Ok(1.0 - dist.cdf(t))
}

/// Sample mean and 95% confidence half-width via Student-t over the samples.
/// With a single sample the half-width is reported as zero.
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|_| Error::InvalidConfig("student-t dof".into()))?;
    let t = dist.inverse_cdf(0.975);
    Ok((mean, t * (var / n).sqrt()))
}

/// Least-squares line fit `y = slope * x + intercept`; returns
/// `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("linear_fit"));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyBatch);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("degenerate x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chi_square_accepts_exact_fit() {
        let p = chi_square_pvalue(&[250, 250, 250, 250], &[0.25; 4]).unwrap();
        assert!(p > 0.99);
    }

    #[test]
    fn chi_square_rejects_gross_mismatch() {
        let p = chi_square_pvalue(&[900, 100], &[0.5, 0.5]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn pearson_on_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 4.0, 6.0, 8.0];
        assert_relative_eq!(pearson(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_is_monotone_invariant() {
        let xs = [0.1, 0.5, 2.0, 9.0];
        let ys: Vec<f64> = xs.iter().map(|&x: &f64| x.exp()).collect();
        assert_relative_eq!(spearman(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = [1.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 1.0, 2.0, 3.0];
        assert_relative_eq!(spearman(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_positive_correlation_is_significant() {
        let p = positive_correlation_pvalue(0.5, 1000).unwrap();
        assert!(p < 1e-10);
        let p = positive_correlation_pvalue(0.0, 1000).unwrap();
        assert!((p - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ci_matches_hand_computation() {
        // Samples 1..=5: mean 3, sd sqrt(2.5), t_{0.975,4} = 2.7764.
        let (mean, hw) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_relative_eq!(mean, 3.0, epsilon = 1e-12);
        assert_relative_eq!(hw, 2.776445 * (2.5f64 / 5.0).sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0];
        let (slope, intercept, r2) = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(intercept, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }
}
