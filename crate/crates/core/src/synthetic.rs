//! Synthetic specimens with known ground truth, and a brute-force simulator
//! for the largest pore in a volume.
//!
//! Everything here samples with its own inverse-transform formulas rather
//! than the tail model's quantile functions, so it can serve as an
//! independent reference for them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::equivalence::EmpiricalCdf;
use crate::error::{Error, Result};
use crate::geometry::{PoreRecord, SpecimenDataset, SpecimenMeta};
use crate::largest::VolumeOfInterest;
use crate::tail::{Cov2, GpdParams};

/// Lognormal sizes truncated above at the tail threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkSpec {
    pub median_um: f64,
    /// Standard deviation of `ln D`.
    pub log_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bulk: BulkSpec,
    pub tail: GpdParams,
    /// Tail pores per mm³.
    pub lambda_above: f64,
    /// Bulk pores per mm³.
    pub lambda_below: f64,
    pub volume_mm3: f64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_above >= 0.0
            && self.lambda_below >= 0.0
            && self.lambda_above.is_finite()
            && self.lambda_below.is_finite()
            && self.volume_mm3 > 0.0
            && self.volume_mm3.is_finite()
            && self.bulk.median_um > 0.0
            && self.bulk.log_sd > 0.0
            && self.tail.threshold > 0.0;
        if !ok {
            return Err(Error::Config(
                "ground truth needs non-negative rates, positive volume, positive bulk median and spread, and a positive threshold".into(),
            ));
        }
        Ok(())
    }
}

/// Parameter uncertainty applied per replication by [`brute_force_largest`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthUncertainty {
    /// Variance of the tail rate (per mm³ squared).
    pub rate_variance: f64,
    /// Covariance of `(σ, ξ)`.
    pub param_cov: Cov2,
}

struct BulkSampler {
    log_median: f64,
    log_sd: f64,
    top: f64,
    normal: Normal,
}

impl BulkSampler {
    fn new(bulk: BulkSpec, threshold: f64) -> Self {
        let normal = Normal::standard();
        let log_median = bulk.median_um.ln();
        let top = normal.cdf((threshold.ln() - log_median) / bulk.log_sd);
        Self { log_median, log_sd: bulk.log_sd, top, normal }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random::<f64>() * self.top;
        // u = 0 maps to −∞; nudge to the smallest representable probability.
        let z = self.normal.inverse_cdf(u.max(f64::MIN_POSITIVE));
        (self.log_median + self.log_sd * z).exp()
    }
}

fn gpd_draw(rng: &mut ChaCha8Rng, mu: f64, sigma: f64, xi: f64) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    if xi == 0.0 {
        mu - sigma * u.ln()
    } else {
        mu + sigma * (u.powf(-xi) - 1.0) / xi
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn sphere(id: String, d: f64) -> Result<PoreRecord> {
    PoreRecord::new(id, PI / 6.0 * d.powi(3), PI * d * d, d, d, None)
}

/// Draws a specimen: `Poisson(λ_above·V)` tail pores above the threshold and
/// `Poisson(λ_below·V)` bulk pores below it, as spheres.
pub fn generate_specimen(truth: &GroundTruth, specimen_id: &str, seed: u64) -> Result<SpecimenDataset> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = truth.volume_mm3;
    let n = poisson(&mut rng, truth.lambda_above * v);
    let m = poisson(&mut rng, truth.lambda_below * v);
    let GpdParams { threshold: mu, scale, shape } = truth.tail;
    let bulk = BulkSampler::new(truth.bulk, mu);
    let mut pores = Vec::with_capacity((n + m) as usize);
    for i in 0..n {
        let mut d = gpd_draw(&mut rng, mu, scale, shape);
        while d <= mu {
            d = gpd_draw(&mut rng, mu, scale, shape);
        }
        pores.push(sphere(format!("t{i}"), d)?);
    }
    for i in 0..m {
        pores.push(sphere(format!("b{i}"), bulk.draw(&mut rng))?);
    }
    SpecimenDataset::new(SpecimenMeta::new(specimen_id, v), pores)
}

fn draw_params(rng: &mut ChaCha8Rng, tail: &GpdParams, cov: &Cov2) -> (f64, f64) {
    let a = cov[0][0].sqrt();
    let b = if a > 0.0 { cov[0][1] / a } else { 0.0 };
    let c = (cov[1][1] - b * b).max(0.0).sqrt();
    loop {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let s = tail.scale + a * z1;
        if s > 0.0 {
            return (s, tail.shape + b * z1 + c * z2);
        }
    }
}

fn one_volume(truth: &GroundTruth, bulk: &BulkSampler, volume: f64, unc: Option<&TruthUncertainty>, rng: &mut ChaCha8Rng) -> f64 {
    let mu = truth.tail.threshold;
    let (rate, (sigma, xi)) = match unc {
        Some(u) => {
            let z: f64 = rng.sample(StandardNormal);
            let rate = (truth.lambda_above + u.rate_variance.sqrt() * z).max(0.0);
            (rate, draw_params(rng, &truth.tail, &u.param_cov))
        }
        None => (truth.lambda_above, (truth.tail.scale, truth.tail.shape)),
    };
    let n = poisson(rng, rate * volume);
    if n > 0 {
        let mut best = f64::NEG_INFINITY;
        for _ in 0..n {
            best = best.max(gpd_draw(rng, mu, sigma, xi));
        }
        return best;
    }
    let m = poisson(rng, truth.lambda_below * volume);
    (0..m).map(|_| bulk.draw(rng)).fold(0.0, f64::max)
}

/// Simulates `n_replications` volumes of size `voi` and records the largest
/// pore in each (0 when a volume has none). With `uncertainty`, each
/// replication first redraws the tail rate and `(σ, ξ)`.
///
/// Replication `i` uses its own stream derived from `seed`, so the result
/// does not depend on scheduling.
pub fn brute_force_largest(
    truth: &GroundTruth,
    voi: VolumeOfInterest,
    n_replications: usize,
    seed: u64,
    uncertainty: Option<TruthUncertainty>,
) -> Result<EmpiricalCdf> {
    truth.validate()?;
    if n_replications == 0 {
        return Err(Error::domain("at least one replication is required"));
    }
    let bulk = BulkSampler::new(truth.bulk, truth.tail.threshold);
    let maxima: Vec<f64> = (0..n_replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            one_volume(truth, &bulk, voi.mm3(), uncertainty.as_ref(), &mut rng)
        })
        .collect();
    EmpiricalCdf::new(maxima)
}
