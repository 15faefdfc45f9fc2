//! Method-of-moments fit of the GPD.
//!
//! Matching the mean `σ/(1−ξ)` and variance `σ²/((1−ξ)²(1−2ξ))` of the
//! excesses gives `ξ̂ = ½(1 − x̄²/s²)` and `σ̂ = ½x̄(1 + x̄²/s²)`.

use crate::error::{Error, Result};

use super::mle::validate_exceedances;
use super::{mom_covariance, Estimator, FitFlag, GpdFit, GpdParams};

/// Shapes at which the moment covariance has a pole.
const POLES: [f64; 3] = [0.25, 1.0 / 3.0, 0.5];

pub fn fit_mom(exceedances: &[f64], threshold: f64) -> Result<GpdFit> {
    let excess = validate_exceedances(exceedances, threshold)?;
    let n = excess.len();
    let nf = n as f64;
    let mean = excess.iter().sum::<f64>() / nf;
    let var = excess.iter().map(|&y| (y - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::Fit("exceedances have zero variance".into()));
    }
    let ratio = mean * mean / var;
    let shape = 0.5 * (1.0 - ratio);
    let scale = 0.5 * mean * (1.0 + ratio);
    let params = GpdParams::new(threshold, scale, shape)?;

    let mut flags = Vec::new();
    let covariance = if shape < 0.25 {
        Some(mom_covariance(scale, shape, n))
    } else {
        flags.push(FitFlag::OutsideMomDomain);
        if POLES.iter().any(|p| (shape - p).abs() < 1e-9) {
            flags.push(FitFlag::CovariancePole);
        }
        None
    };
    Ok(GpdFit {
        params,
        covariance,
        estimator: Estimator::Mom,
        n_exceed: n,
        flags,
        log_likelihood: params.log_likelihood(exceedances),
    })
}
