//! Generalized Pareto tail model: evaluation, estimators, and the fitted
//! [`TailFit`] consumed by the largest-pore estimator.

mod gpd;
mod mle;
mod mom;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SpecimenDataset;
use crate::largest::rates::{estimate_rates, RateEstimate};

pub use gpd::{GpdParams, XI_SWITCH};
pub(crate) use gpd::excess_factor;
pub use mle::{fit_mle, MAX_SHAPE, MIN_SHAPE};
pub use mom::fit_mom;

/// Symmetric 2×2 covariance over `(σ, ξ)`.
pub type Cov2 = [[f64; 2]; 2];

/// Default minimum number of exceedances for a tail fit.
pub const DEFAULT_MIN_TAIL: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Mle,
    Mom,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Mle => "MLE",
            Estimator::Mom => "MOM",
        })
    }
}

/// Which estimator(s) a tail fit may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorPolicy {
    /// MLE first, MOM when the MLE shape is outside its valid domain.
    #[default]
    Select,
    Mle,
    Mom,
}

impl std::str::FromStr for EstimatorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "select" | "auto" => Ok(Self::Select),
            "mle" => Ok(Self::Mle),
            "mom" => Ok(Self::Mom),
            _ => Err(Error::Config(format!("unknown estimator policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// ξ̂ ≤ −0.5: the MLE is not asymptotically normal.
    OutsideMleDomain,
    /// ξ̂ ≥ 0.25: the MOM estimator is not asymptotically normal.
    OutsideMomDomain,
    /// Neither estimator landed inside its domain.
    NoEstimatorInDomain,
    /// MOM shape sits on a pole of its covariance.
    CovariancePole,
    /// MLE shape hit the ξ = −1 constraint.
    ShapeAtLowerBound,
}

impl fmt::Display for FitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitFlag::OutsideMleDomain => "outside MLE asymptotic-normality domain",
            FitFlag::OutsideMomDomain => "outside MOM asymptotic-normality domain",
            FitFlag::NoEstimatorInDomain => "no estimator in valid domain",
            FitFlag::CovariancePole => "MOM covariance pole",
            FitFlag::ShapeAtLowerBound => "MLE shape at lower bound -1",
        })
    }
}

/// Parameter estimates from one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GpdFit {
    pub params: GpdParams,
    /// `None` when the estimator is outside its asymptotic-normality domain.
    pub covariance: Option<Cov2>,
    pub estimator: Estimator,
    pub n_exceed: usize,
    pub flags: Vec<FitFlag>,
    pub log_likelihood: f64,
}

impl GpdFit {
    pub fn se_scale(&self) -> Option<f64> {
        self.covariance.map(|c| c[0][0].sqrt())
    }

    pub fn se_shape(&self) -> Option<f64> {
        self.covariance.map(|c| c[1][1].sqrt())
    }

    /// Delta-method standard error of the modified scale `σ − ξµ`.
    pub fn se_modified_scale(&self) -> Option<f64> {
        let mu = self.params.threshold;
        self.covariance
            .map(|c| (c[0][0] + mu * mu * c[1][1] - 2.0 * mu * c[0][1]).max(0.0).sqrt())
    }
}

/// Asymptotic MLE covariance `((1+ξ)/n)·[[2σ², σ], [σ, 1+ξ]]`.
pub fn mle_covariance(scale: f64, shape: f64, n: usize) -> Cov2 {
    let f = (1.0 + shape) / n as f64;
    let off = f * scale;
    [[f * 2.0 * scale * scale, off], [off, f * (1.0 + shape)]]
}

/// Asymptotic MOM covariance. The prefactor
/// `(1−ξ)²/(n(1−3ξ)(1−4ξ))` multiplies
/// `[[2σ²(1−6ξ+12ξ²)/(1−2ξ), σ(1−4ξ+12ξ²)], [·, (1−2ξ)(1−ξ+6ξ²)]]`.
pub fn mom_covariance(scale: f64, shape: f64, n: usize) -> Cov2 {
    let x = shape;
    let f = (1.0 - x).powi(2) / (n as f64 * (1.0 - 3.0 * x) * (1.0 - 4.0 * x));
    let ss = f * 2.0 * scale * scale * (1.0 - 6.0 * x + 12.0 * x * x) / (1.0 - 2.0 * x);
    let sx = f * scale * (1.0 - 4.0 * x + 12.0 * x * x);
    let xx = f * (1.0 - 2.0 * x) * (1.0 - x + 6.0 * x * x);
    [[ss, sx], [sx, xx]]
}

/// MLE when its shape is above −0.5; otherwise MOM when its shape is below
/// 0.25; otherwise the MLE fit flagged [`FitFlag::NoEstimatorInDomain`].
pub fn select_estimator(exceedances: &[f64], threshold: f64) -> Result<GpdFit> {
    let mle = fit_mle(exceedances, threshold);
    if let Ok(fit) = &mle {
        if fit.params.shape > -0.5 {
            return mle;
        }
    }
    choose(mle, fit_mom(exceedances, threshold))
}

fn choose(mle: Result<GpdFit>, mom: Result<GpdFit>) -> Result<GpdFit> {
    match (mle, mom) {
        (Ok(fit), _) if fit.params.shape > -0.5 => Ok(fit),
        (_, Ok(fit)) if fit.params.shape < 0.25 => Ok(fit),
        (Ok(mut fit), _) => {
            fit.flags.push(FitFlag::NoEstimatorInDomain);
            Ok(fit)
        }
        (Err(_), Ok(mut fit)) => {
            fit.flags.push(FitFlag::NoEstimatorInDomain);
            Ok(fit)
        }
        (Err(e), Err(_)) => Err(e),
    }
}

pub fn fit_with_policy(exceedances: &[f64], threshold: f64, policy: EstimatorPolicy) -> Result<GpdFit> {
    match policy {
        EstimatorPolicy::Select => select_estimator(exceedances, threshold),
        EstimatorPolicy::Mle => fit_mle(exceedances, threshold),
        EstimatorPolicy::Mom => fit_mom(exceedances, threshold),
    }
}

/// QQ pairs `(theoretical, sample)`: the i-th smallest exceedance against the
/// fitted quantile at plotting position `(i − 0.5)/n`.
pub fn qq_points(params: &GpdParams, exceedances: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let p = (i as f64 + 0.5) / n;
            // p < 1 always, so the quantile exists.
            (params.quantile(p).unwrap_or(f64::INFINITY), d)
        })
        .collect()
}

/// A fitted tail for one specimen: parameters, their covariance, and the
/// Poisson rates above and below the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub fit_id: String,
    pub params: GpdParams,
    pub covariance: Option<Cov2>,
    pub estimator: Estimator,
    pub n_exceed: usize,
    pub flags: Vec<FitFlag>,
    /// Exceedances per mm³.
    pub lambda_above: RateEstimate,
    /// Sub-threshold pores per mm³.
    pub lambda_below: RateEstimate,
    /// Sub-threshold diameters, ascending, for the no-exceedance fallback.
    pub empirical_below: Vec<f64>,
    pub scanned_volume_mm3: f64,
}

impl TailFit {
    pub fn from_parts(
        fit_id: impl Into<String>,
        fit: GpdFit,
        lambda_above: RateEstimate,
        lambda_below: RateEstimate,
        empirical_below: Vec<f64>,
        scanned_volume_mm3: f64,
    ) -> Self {
        Self {
            fit_id: fit_id.into(),
            params: fit.params,
            covariance: fit.covariance,
            estimator: fit.estimator,
            n_exceed: fit.n_exceed,
            flags: fit.flags,
            lambda_above,
            lambda_below,
            empirical_below,
            scanned_volume_mm3,
        }
    }

    pub fn gpd_fit(&self) -> GpdFit {
        GpdFit {
            params: self.params,
            covariance: self.covariance,
            estimator: self.estimator,
            n_exceed: self.n_exceed,
            flags: self.flags.clone(),
            log_likelihood: f64::NAN,
        }
    }
}

/// Fits the tail of `dataset` above `threshold`.
pub fn fit_tail(
    dataset: &SpecimenDataset,
    threshold: f64,
    policy: EstimatorPolicy,
    min_tail: usize,
) -> Result<TailFit> {
    let exceed = dataset.exceedances(threshold);
    if exceed.len() < min_tail.max(2) {
        return Err(Error::TooFewExceedances { found: exceed.len(), required: min_tail.max(2) });
    }
    let fit = fit_with_policy(&exceed, threshold, policy)?;
    let (above, below) = estimate_rates(dataset, threshold)?;
    Ok(TailFit::from_parts(
        format!("{}@{}", dataset.meta().specimen_id, threshold),
        fit,
        above,
        below,
        dataset.below(threshold),
        dataset.scanned_volume_mm3(),
    ))
}


#[cfg(test)]
mod tests {
    use super::test_support::gpd_sample;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn selects_mle_for_heavy_tail() {
        let data = gpd_sample(0.0, 1.0, 0.3, 3000, 21);
        assert_eq!(select_estimator(&data, 0.0).unwrap().estimator, Estimator::Mle);
    }

    #[test]
    fn selects_mom_for_very_short_tail() {
        let data = gpd_sample(0.0, 1.0, -0.7, 3000, 22);
        let fit = select_estimator(&data, 0.0).unwrap();
        assert_eq!(fit.estimator, Estimator::Mom);
        assert!(fit.covariance.is_some());
    }

    fn stub(estimator: Estimator, shape: f64) -> GpdFit {
        GpdFit {
            params: GpdParams::new(0.0, 1.0, shape).unwrap(),
            covariance: None,
            estimator,
            n_exceed: 100,
            flags: vec![],
            log_likelihood: 0.0,
        }
    }

    #[test]
    fn flags_when_neither_estimator_is_valid() {
        let fit = choose(Ok(stub(Estimator::Mle, -0.8)), Ok(stub(Estimator::Mom, 0.4))).unwrap();
        assert_eq!(fit.estimator, Estimator::Mle);
        assert!(fit.flags.contains(&FitFlag::NoEstimatorInDomain));
        let fit = choose(Err(Error::Fit("x".into())), Ok(stub(Estimator::Mom, 0.4))).unwrap();
        assert_eq!(fit.estimator, Estimator::Mom);
        assert!(fit.flags.contains(&FitFlag::NoEstimatorInDomain));
        let fit = choose(Ok(stub(Estimator::Mle, -0.8)), Ok(stub(Estimator::Mom, -0.7))).unwrap();
        assert_eq!(fit.estimator, Estimator::Mom);
        assert!(fit.flags.is_empty());
        assert!(choose(Err(Error::Fit("a".into())), Err(Error::Fit("b".into()))).is_err());
    }

    #[test]
    fn qq_points_on_exact_quantiles_lie_on_diagonal() {
        let p = GpdParams::new(10.0, 3.0, 0.2).unwrap();
        let n = 50;
        let data: Vec<f64> = (0..n).map(|i| p.quantile((i as f64 + 0.5) / n as f64).unwrap()).collect();
        for (t, s) in qq_points(&p, &data) {
            assert!((t - s).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn qq_single_point_uses_median() {
        let p = GpdParams::new(0.0, 1.0, 0.0).unwrap();
        let pts = qq_points(&p, &[5.0]);
        assert_eq!(pts.len(), 1);
        assert!((pts[0].0 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn qq_correlation_is_high_for_simulated_sample() {
        let data = gpd_sample(0.0, 1.0, 0.1, 30, 7);
        let fit = select_estimator(&data, 0.0).unwrap();
        let pts = qq_points(&fit.params, &data);
        let n = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in &pts {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        assert!(sxy / (sxx * syy).sqrt() > 0.95);
    }

    proptest! {
        #[test]
        fn covariances_agree_at_zero_shape(sigma in 1e-3f64..1e3, n in 1usize..100_000) {
            let a = mle_covariance(sigma, 0.0, n);
            let b = mom_covariance(sigma, 0.0, n);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * a[i][j].abs());
                }
            }
        }

        #[test]
        fn covariances_are_symmetric_psd_in_domain(sigma in 1e-2f64..1e2, n in 30usize..10_000, xi in -2.0f64..0.6) {
            let mut mats = vec![];
            if xi > -0.5 { mats.push(mle_covariance(sigma, xi, n)); }
            if xi < 0.25 { mats.push(mom_covariance(sigma, xi, n)); }
            for c in mats {
                prop_assert_eq!(c[0][1], c[1][0]);
                prop_assert!(c[0][0] > 0.0 && c[1][1] > 0.0);
                prop_assert!(c[0][0] * c[1][1] - c[0][1] * c[0][1] >= -1e-12 * c[0][0] * c[1][1]);
            }
        }
    }
}
