use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |ξ| the exponential-limit formulas are used.
pub const XI_SWITCH: f64 = 1e-9;

/// Generalized Pareto tail above `threshold` (µm) with `scale` σ (µm) and
/// dimensionless `shape` ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GpdParams {
    pub fn new(threshold: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::domain(format!("GPD scale must be positive, got {scale}")));
        }
        if !threshold.is_finite() || !shape.is_finite() {
            return Err(Error::domain("GPD threshold and shape must be finite"));
        }
        Ok(Self { threshold, scale, shape })
    }

    fn is_exponential(&self) -> bool {
        self.shape.abs() < XI_SWITCH
    }

    /// Right end of the support, `µ − σ/ξ`, finite only for ξ < 0.
    pub fn upper_bound(&self) -> Option<f64> {
        (self.shape < 0.0 && !self.is_exponential()).then(|| self.threshold - self.scale / self.shape)
    }

    /// `P(D ≤ d)` for a single exceedance. Zero at or below the threshold,
    /// one past the upper bound.
    pub fn cdf(&self, d: f64) -> f64 {
        if d <= self.threshold {
            return 0.0;
        }
        let y = (d - self.threshold) / self.scale;
        if self.is_exponential() {
            return -(-y).exp_m1();
        }
        let z = self.shape * y;
        if z <= -1.0 {
            return 1.0;
        }
        -(-z.ln_1p() / self.shape).exp_m1()
    }

    /// Survival function `1 − cdf(d)`, computed without cancellation.
    pub fn sf(&self, d: f64) -> f64 {
        if d <= self.threshold {
            return 1.0;
        }
        let y = (d - self.threshold) / self.scale;
        if self.is_exponential() {
            return (-y).exp();
        }
        let z = self.shape * y;
        if z <= -1.0 {
            return 0.0;
        }
        (-z.ln_1p() / self.shape).exp()
    }

    /// Inverse CDF. `q = 1` is allowed only for a bounded tail (ξ < 0).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(format!("probability must lie in [0, 1], got {q}")));
        }
        if q == 1.0 {
            return self.upper_bound().ok_or_else(|| {
                Error::Unbounded(format!("q = 1 with shape {} has no finite quantile", self.shape))
            });
        }
        Ok(self.threshold + self.scale * excess_factor(self.shape, (-q).ln_1p()))
    }

    pub fn ln_pdf(&self, d: f64) -> f64 {
        let y = (d - self.threshold) / self.scale;
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        if self.is_exponential() {
            return -self.scale.ln() - y;
        }
        let z = self.shape * y;
        if z <= -1.0 {
            return f64::NEG_INFINITY;
        }
        -self.scale.ln() - (1.0 + 1.0 / self.shape) * z.ln_1p()
    }

    pub fn log_likelihood(&self, sample: &[f64]) -> f64 {
        sample.iter().map(|&d| self.ln_pdf(d)).sum()
    }

    /// Theoretical mean excess over a level `u ≥ threshold`:
    /// `(σ + ξ(u − µ)) / (1 − ξ)`, which with µ = 0 reads
    /// `σ/(1−ξ) + ξu/(1−ξ)`. Undefined once the mean is infinite (ξ ≥ 1).
    pub fn mean_excess(&self, u: f64) -> Result<f64> {
        if self.shape >= 1.0 {
            return Err(Error::domain(format!(
                "mean excess needs shape below 1, got {}",
                self.shape
            )));
        }
        if u < self.threshold {
            return Err(Error::domain(format!("level {u} lies below the threshold {}", self.threshold)));
        }
        Ok((self.scale + self.shape * (u - self.threshold)) / (1.0 - self.shape))
    }

    /// Modified scale `σ* = σ − ξµ`, constant across valid thresholds.
    pub fn modified_scale(&self) -> f64 {
        self.scale - self.shape * self.threshold
    }
}

/// `((e^{ln_tail})^{−ξ} − 1)/ξ` for `ln_tail = ln(1 − q) ≤ 0`, with the
/// exponential limit `−ln_tail`. Shared by the single-exceedance quantile and
/// the largest-of-N quantile.
#[inline]
pub(crate) fn excess_factor(shape: f64, ln_tail: f64) -> f64 {
    if shape.abs() < XI_SWITCH {
        -ln_tail
    } else {
        (-shape * ln_tail).exp_m1() / shape
    }
}
