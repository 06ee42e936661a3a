//! Fit metrics, a Kolmogorov-Smirnov check against a normal law, and a
//! finite-difference Hessian spectrum probe for small networks.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::potential::Potential;

fn check_lengths(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(targets.len(), predictions.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    Ok(())
}

pub fn sse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    Ok(sse(predictions, targets)? / predictions.len() as f64)
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the target mean.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    if targets.len() < 2 {
        return Err(Error::InvalidArgument("R^2 needs at least 2 samples".into()));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("targets have zero variance".into()));
    }
    Ok(1.0 - sse(predictions, targets)? / ss_tot)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(truth.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// One-sample Kolmogorov-Smirnov test against `N(mean, sd)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
}

pub fn ks_normal(samples: &[f64], mean: f64, sd: f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let law = Normal::new(mean, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    // Stephens' small-sample correction of the asymptotic argument.
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Largest `|H_ij - H_ji|` before symmetrization.
    pub raw_asymmetry: f64,
}

impl Spectrum {
    /// `log10(max |lambda| / min |lambda|)`; infinite if some eigenvalue is exactly zero.
    pub fn decades(&self) -> f64 {
        let abs = self.eigenvalues.iter().map(|v| v.abs());
        let max = abs.clone().fold(0.0, f64::max);
        let min = abs.fold(f64::INFINITY, f64::min);
        (max / min).log10()
    }
}

pub const DEFAULT_HESSIAN_CAP: usize = 200;

/// Hessian of `potential` at `x` from central differences of its exact
/// gradient, symmetrized, and its full eigenvalue list.
///
/// Column `j` uses the step `h_j = 1e-4 (1 + |x_j|)`.
pub fn hessian_spectrum<P: Potential + ?Sized>(potential: &P, x: &[f64], cap: usize) -> Result<Spectrum> {
    let n = x.len();
    if n > cap {
        return Err(Error::InvalidArgument(format!(
            "{n} parameters exceeds the dense Hessian cap of {cap}"
        )));
    }
    if potential.dim() != n {
        return Err(Error::shape(potential.dim(), n));
    }
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut probe = x.to_vec();
    let mut g_plus = vec![0.0; n];
    let mut g_minus = vec![0.0; n];
    for j in 0..n {
        let step = 1e-4 * (1.0 + x[j].abs());
        probe[j] = x[j] + step;
        potential.value_and_gradient(&probe, &mut g_plus)?;
        probe[j] = x[j] - step;
        potential.value_and_gradient(&probe, &mut g_minus)?;
        probe[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (g_plus[i] - g_minus[i]) / (2.0 * step);
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian".into()));
    }
    let mut raw_asymmetry: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            raw_asymmetry = raw_asymmetry.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum {
        eigenvalues,
        raw_asymmetry,
    })
}

/// Test-set comparison between the optimizer endpoint and the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `"mse"` (lower is better) or `"accuracy"` (higher is better).
    pub metric_kind: String,
    pub adam_test_metric: Option<f64>,
    pub ensemble_test_metric: f64,
    pub improved: bool,
    pub adam_train_metric: Option<f64>,
    pub ensemble_train_metric: f64,
    /// Squared error against the noiseless generating curve, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_truth_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_truth_mse: Option<f64>,
    pub ensemble_size: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn is_better(metric_kind: &str, candidate: f64, baseline: f64) -> bool {
        match metric_kind {
            "accuracy" => candidate > baseline,
            _ => candidate < baseline,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::DiagonalQuadratic;

    #[test]
    fn perfect_and_mean_predictors() {
        let t = [1.0, 2.0, 4.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        let m = 7.0 / 3.0;
        assert!(r_squared(&[m; 3], &t).unwrap().abs() < 1e-15);
        assert!(r_squared(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(r_squared(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        let truth: Vec<usize> = (0..38).map(|i| i % 3).collect();
        let pred: Vec<usize> = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| if i < 19 { t } else { (t + 1) % 3 })
            .collect();
        assert_eq!(accuracy(&pred, &truth).unwrap(), 19.0 / 38.0);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn quadratic_spectrum() {
        let p = DiagonalQuadratic::harmonic(3.0);
        let s = hessian_spectrum(&p, &[0.7], DEFAULT_HESSIAN_CAP).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-6);
        let p = DiagonalQuadratic::new(vec![1.0, 100.0]);
        let s = hessian_spectrum(&p, &[0.3, -0.2], DEFAULT_HESSIAN_CAP).unwrap();
        assert!((s.eigenvalues[0] - 100.0).abs() < 1e-6);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-6);
        assert!((s.decades() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn spectrum_cap() {
        let p = DiagonalQuadratic::flat(3);
        assert!(hessian_spectrum(&p, &[0.0; 3], 2).is_err());
    }

    #[test]
    fn ks_accepts_matching_law_and_rejects_shifted() {
        // Deterministic normal quantiles: an ideal sample.
        let law = Normal::new(0.0, 1.0).unwrap();
        let n = 2000;
        let xs: Vec<f64> = (0..n)
            .map(|i| law.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        assert!(ks_normal(&xs, 0.0, 1.0).unwrap().p_value > 0.99);
        assert!(ks_normal(&xs, 0.3, 1.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Critical value of the Kolmogorov distribution at alpha = 0.05.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }
}
