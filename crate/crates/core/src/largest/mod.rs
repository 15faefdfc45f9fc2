//! Distribution of the largest pore in a volume of interest.
//!
//! For a known exceedance count `N` the largest-pore CDF is `G(d)^N`, with
//! `G` the GPD CDF, and its quantile is
//! `σ/ξ · ((1 − p^{1/N})^{−ξ} − 1) + µ`. With uncertain counts and parameters
//! there is no closed form, so [`sample_largest`] marginalizes by Monte Carlo.

mod histogram;
mod monte_carlo;
pub mod rates;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tail::{excess_factor, GpdParams, TailFit};

pub use histogram::{LargestPoreDistribution, Provenance, Summary};
pub use monte_carlo::sample_largest;
pub use rates::{estimate_rates, RateEstimate};

/// Volume of interest in mm³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeOfInterest(f64);

impl VolumeOfInterest {
    pub fn new(volume_mm3: f64) -> Result<Self> {
        if !(volume_mm3 > 0.0) || !volume_mm3.is_finite() {
            return Err(Error::domain(format!("volume of interest must be positive, got {volume_mm3}")));
        }
        Ok(Self(volume_mm3))
    }

    pub fn mm3(&self) -> f64 {
        self.0
    }
}

/// Which sources of uncertainty the Monte Carlo propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    /// Point estimates with the expected count `λV`.
    None,
    /// Poisson counts with a Gaussian rate; point-estimate parameters.
    PoissonOnly,
    /// Counts and `(σ, ξ)` drawn from the asymptotic normal.
    #[default]
    All,
}

impl std::str::FromStr for UncertaintyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "traditional" => Ok(Self::None),
            "poisson_only" | "poisson" => Ok(Self::PoissonOnly),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown uncertainty mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for UncertaintyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::PoissonOnly => "poisson_only",
            Self::All => "all",
        })
    }
}

/// Monte Carlo sample sizes. The run evaluates every combination of the
/// count, parameter and probability axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub n_count_samples: usize,
    pub n_p_samples: usize,
    pub n_param_samples: usize,
    pub histogram_bins: usize,
    pub seed: u64,
    pub uncertainty_mode: UncertaintyMode,
    /// Worker threads; 0 uses the ambient rayon pool. Results do not depend
    /// on this value.
    #[serde(skip_serializing_if = "is_zero")]
    pub workers: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_count_samples: 1000,
            n_p_samples: 1000,
            n_param_samples: 1000,
            histogram_bins: 2048,
            seed: 0,
            uncertainty_mode: UncertaintyMode::All,
            workers: 0,
        }
    }
}

impl McConfig {
    /// 464 samples per axis, about 10⁸ combinations.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_count_samples: 464,
            n_p_samples: 464,
            n_param_samples: 464,
            seed,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: UncertaintyMode) -> Self {
        self.uncertainty_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_count_samples == 0 || self.n_p_samples == 0 || self.n_param_samples == 0 {
            return Err(Error::Config("Monte Carlo sample counts must be at least 1".into()));
        }
        if self.histogram_bins < 16 {
            return Err(Error::Config(format!(
                "histogram needs at least 16 bins, got {}",
                self.histogram_bins
            )));
        }
        Ok(())
    }

    pub fn combinations(&self) -> u128 {
        self.n_count_samples as u128 * self.n_p_samples as u128 * self.n_param_samples as u128
    }
}

/// `P(D_max ≤ d) = G(d)^N` for `N > 0` exceedances (non-integer `N` allowed).
pub fn largest_cdf_closed(params: &GpdParams, n_pores: f64, d: f64) -> Result<f64> {
    if !(n_pores > 0.0) {
        return Err(Error::domain(format!("pore count must be positive, got {n_pores}")));
    }
    let sf = params.sf(d);
    if sf >= 1.0 {
        return Ok(0.0);
    }
    Ok((n_pores * (-sf).ln_1p()).exp())
}

/// Inverse of [`largest_cdf_closed`].
pub fn largest_quantile_closed(params: &GpdParams, n_pores: f64, p: f64) -> Result<f64> {
    if !(n_pores > 0.0) {
        return Err(Error::domain(format!("pore count must be positive, got {n_pores}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability must lie in [0, 1], got {p}")));
    }
    if p == 1.0 {
        return params.upper_bound().ok_or_else(|| {
            Error::Unbounded(format!("p = 1 with shape {} has no finite quantile", params.shape))
        });
    }
    Ok(params.threshold + params.scale * excess_factor(params.shape, ln_tail_of_max(p.ln(), n_pores)))
}

/// `ln(1 − p^{1/N})` from `ln p`, without cancellation for large `N`.
#[inline]
pub(crate) fn ln_tail_of_max(ln_p: f64, n: f64) -> f64 {
    (-(ln_p / n).exp_m1()).ln()
}

/// Summary of the largest-pore distribution at one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub volume_mm3: f64,
    pub summary: Summary,
}

/// Runs [`sample_largest`] at each volume with the same configuration and
/// seed, so rows are directly comparable.
pub fn volume_sweep(fit: &TailFit, volumes: &[f64], config: &McConfig) -> Result<Vec<SweepRow>> {
    if volumes.is_empty() {
        return Err(Error::domain("volume list is empty"));
    }
    if volumes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("volumes must be strictly ascending"));
    }
    volumes
        .iter()
        .map(|&v| {
            let dist = sample_largest(fit, VolumeOfInterest::new(v)?, config)?;
            Ok(SweepRow { volume_mm3: v, summary: dist.summary() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pore_reduces_to_gpd() {
        let p = GpdParams::new(2.0, 1.5, 0.3).unwrap();
        for d in [2.0, 2.5, 4.0, 20.0] {
            assert!((largest_cdf_closed(&p, 1.0, d).unwrap() - p.cdf(d)).abs() < 1e-15);
        }
        let p = GpdParams::new(0.0, 1.0, 1.0).unwrap();
        assert!((largest_quantile_closed(&p, 1.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_pores_square_the_cdf() {
        let p = GpdParams::new(0.0, 1.0, 0.5).unwrap();
        let f = largest_cdf_closed(&p, 2.0, 1.0).unwrap();
        assert!((f - (1.0 - 1.5f64.powi(-2)).powi(2)).abs() < 1e-15);
        assert!((f - 0.3087).abs() < 1e-4);
    }

    #[test]
    fn quantile_at_zero_is_threshold() {
        let p = GpdParams::new(7.0, 1.0, -0.2).unwrap();
        assert_eq!(largest_quantile_closed(&p, 30.0, 0.0).unwrap(), 7.0);
        assert_eq!(largest_quantile_closed(&p, 30.0, 1.0).unwrap(), 12.0);
        assert!(largest_cdf_closed(&p, 0.0, 8.0).is_err());
    }

    #[test]
    fn closed_form_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = GpdParams::new(10.0, rng.random_range(0.5..5.0), rng.random_range(-0.4..0.8)).unwrap();
            let n = rng.random_range(1..5000) as f64;
            let q: f64 = rng.random_range(0.001..0.999);
            let d = largest_quantile_closed(&p, n, q).unwrap();
            let back = largest_cdf_closed(&p, n, d).unwrap();
            assert!((back - q).abs() < 1e-10, "{p:?} n={n} q={q} back={back}");
        }
    }

    #[test]
    fn more_pores_shift_the_cdf_down() {
        let p = GpdParams::new(0.0, 2.0, 0.1).unwrap();
        for d in [0.5, 1.0, 5.0, 20.0] {
            let mut prev = 1.0;
            for n in 1..50 {
                let f = largest_cdf_closed(&p, n as f64, d).unwrap();
                assert!(f <= prev);
                prev = f;
            }
        }
    }

    #[test]
    fn doubling_count_matches_square_root_of_probability() {
        // G(d)^{2N} = p  ⇔  G(d)^N = √p
        let p = GpdParams::new(5.0, 2.0, 0.2).unwrap();
        let a = largest_quantile_closed(&p, 400.0, 0.5).unwrap();
        let b = largest_quantile_closed(&p, 200.0, 0.5f64.sqrt()).unwrap();
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn rejects_bad_volume_and_config() {
        assert!(VolumeOfInterest::new(0.0).is_err());
        assert!(VolumeOfInterest::new(-3.0).is_err());
        let cfg = McConfig { histogram_bins: 8, ..McConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = McConfig { n_p_samples: 0, ..McConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
