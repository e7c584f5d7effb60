//! Empirical tail-risk kernel: VaR, CVaR and the epistemic confidence score.
//!
//! All estimators operate on a [`SampleSet`], which validates and sorts its
//! samples once on construction; VaR, CVaR and the summary share the sorted
//! view. The quantile convention is the inverse-CDF (lower) quantile,
//! `sorted[ceil(alpha * n) - 1]`, with no interpolation: it matches the
//! inf-definition of VaR exactly on empirical CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-empty set of finite, non-negative latency samples (milliseconds),
/// kept sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    sorted: Vec<f64>,
}

impl SampleSet {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EstimatorDomain("empty sample set".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::EstimatorDomain(
                "samples must be finite and non-negative".into(),
            ));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Samples in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }

    /// Population standard deviation: the Monte Carlo set is treated as the
    /// full predicted distribution, not a sample from one.
    pub fn std(&self) -> f64 {
        // Degenerate sets are exactly zero-spread; the summed form below
        // would report rounding noise (~1e-15) and break C_E = 1 exactly.
        if self.sorted.first() == self.sorted.last() {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .sorted
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / self.sorted.len() as f64;
        var.sqrt()
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().expect("non-empty")
    }
}

/// Bundled tail statistics of one latency distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub var_alpha_ms: f64,
    pub cvar_alpha_ms: f64,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Empirical Value-at-Risk: the smallest sample `l` with
/// `count(samples <= l) / n >= alpha`.
pub fn empirical_var(samples: &SampleSet, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = samples.len();
    let rank = (alpha * n as f64).ceil() as usize; // 1-based order statistic
    let idx = rank.clamp(1, n) - 1;
    Ok(samples.sorted()[idx])
}

/// Empirical CVaR: mean of all samples strictly above the VaR. When the
/// strict tail is empty (the VaR is the maximum) the estimator falls back
/// to the VaR itself, keeping it total and conservative.
pub fn empirical_cvar(samples: &SampleSet, alpha: f64) -> Result<f64> {
    let var = empirical_var(samples, alpha)?;
    let sorted = samples.sorted();
    let tail_start = sorted.partition_point(|v| *v <= var);
    if tail_start == sorted.len() {
        return Ok(var);
    }
    let tail = &sorted[tail_start..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Epistemic confidence score `max(0, 1 - std/mean)`, clamped to [0, 1].
///
/// A non-positive mean is defined as total non-confidence (0.0); it cannot
/// occur for latency distributions with nonzero service time.
pub fn confidence_score(mean_ms: f64, std_ms: f64) -> f64 {
    if mean_ms <= 0.0 {
        return 0.0;
    }
    (1.0 - std_ms / mean_ms).clamp(0.0, 1.0)
}

/// One-pass bundle of mean, std, VaR and CVaR at the given level.
pub fn summarize(samples: &SampleSet, alpha: f64) -> Result<TailStats> {
    Ok(TailStats {
        mean_ms: samples.mean(),
        std_ms: samples.std(),
        var_alpha_ms: empirical_var(samples, alpha)?,
        cvar_alpha_ms: empirical_cvar(samples, alpha)?,
        alpha,
    })
}
