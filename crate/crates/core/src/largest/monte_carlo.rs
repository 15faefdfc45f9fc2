//! Product-grid Monte Carlo for the largest-pore distribution.
//!
//! Three independent axes are sampled up front from their own seeded streams:
//! counts (exceedances `N` and sub-threshold pores `M` per draw), parameters
//! `(σ, ξ)`, and probabilities `p`. Every combination is evaluated with the
//! largest-of-N quantile and binned into a histogram whose edges come from a
//! small pilot run. Work is split into fixed blocks of the count × parameter
//! grid; block results are merged by integer addition and the running sum for
//! the mean is reduced in block order, so the output does not depend on the
//! number of worker threads.
//!
//! Axes that a mode pins at a point estimate collapse to a single weighted
//! entry instead of being evaluated repeatedly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal, Poisson};

use crate::error::{Error, Result};
use crate::tail::{Cov2, TailFit, XI_SWITCH};

use super::histogram::{LargestPoreDistribution, Provenance};
use super::{ln_tail_of_max, McConfig, UncertaintyMode, VolumeOfInterest};

const STREAM_COUNTS: u64 = 1;
const STREAM_PARAMS: u64 = 2;
const STREAM_P: u64 = 3;
const STREAM_PILOT_P: u64 = 4;

/// Parameter rows per work block.
const PARAM_BLOCK: usize = 64;
const PILOT_BUDGET: usize = 1 << 20;
const PILOT_COUNTS: usize = 32;
const PILOT_PARAMS: usize = 1024;
const TOP_QUANTILE: f64 = 0.99999;

#[derive(Debug, Clone, Copy)]
struct CountDraw {
    /// Exceedances; may be non-integer when pinned at `λV`.
    above: f64,
    below: f64,
}

struct Axes {
    counts: Vec<CountDraw>,
    count_weight: u64,
    params: Vec<(f64, f64)>,
    param_weight: u64,
    ln_p: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stratified uniforms: one draw in each of `n` equal slices of (0, 1), in
/// slice order.
fn stratified(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let u: f64 = rng.sample(Open01);
            (k as f64 + u) / n as f64
        })
        .collect()
}

/// Stratified uniforms in random order, for pairing with other coordinates.
fn shuffled_strata(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut u = stratified(rng, n);
    u.shuffle(rng);
    u
}

fn stratified_ln_p(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    stratified(rng, n).into_iter().map(f64::ln).collect()
}

fn poisson_inverse(mean: f64, u: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Config(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.inverse_cdf(u) as f64)
}

fn cholesky(cov: &Cov2) -> Result<(f64, f64, f64)> {
    let a = cov[0][0].sqrt();
    if !(a > 0.0) {
        return Err(Error::CovarianceUnavailable("scale variance is not positive".into()));
    }
    let b = cov[0][1] / a;
    let rem = cov[1][1] - b * b;
    if rem < -1e-12 * cov[1][1].abs() || !rem.is_finite() {
        return Err(Error::CovarianceUnavailable("covariance is not positive semi-definite".into()));
    }
    Ok((a, b, rem.max(0.0).sqrt()))
}

/// Latin-hypercube sample of `n` pairs from the bivariate normal around
/// `(σ̂, ξ̂)`, conditioned on σ > 0. The scale coordinate is inverted from
/// the normal truncated at zero, which has the same law as redrawing every
/// pair with σ ≤ 0.
pub(crate) fn sample_params(
    rng: &mut ChaCha8Rng,
    scale: f64,
    shape: f64,
    cov: &Cov2,
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    let (a, b, c) = cholesky(cov)?;
    let normal = Normal::standard();
    let lo = normal.cdf(-scale / a);
    if 1.0 - lo < 1e-12 {
        return Err(Error::CovarianceUnavailable(format!(
            "scale {scale} is {:.1} standard errors from zero; almost no draws have positive scale",
            scale / a
        )));
    }
    let u1 = shuffled_strata(rng, n);
    let u2 = shuffled_strata(rng, n);
    Ok(u1
        .into_iter()
        .zip(u2)
        .map(|(u1, u2)| {
            let z1 = normal.inverse_cdf(lo + u1 * (1.0 - lo));
            let z2 = normal.inverse_cdf(u2);
            ((scale + a * z1).max(f64::MIN_POSITIVE), shape + b * z1 + c * z2)
        })
        .collect())
}

fn build_axes(fit: &TailFit, volume: f64, config: &McConfig) -> Result<Axes> {
    let mode = config.uncertainty_mode;
    let below_mean = fit.lambda_below.rate * volume;

    let (counts, count_weight) = if mode == UncertaintyMode::None {
        let c = CountDraw { above: fit.lambda_above.rate * volume, below: below_mean };
        (vec![c], config.n_count_samples as u64)
    } else {
        // Rate, exceedance count and sub-threshold count each come from a
        // shuffled stratified uniform pushed through its inverse CDF.
        let mut rng = stream(config.seed, STREAM_COUNTS);
        let n = config.n_count_samples;
        let (u_rate, u_above, u_below) = (shuffled_strata(&mut rng, n), shuffled_strata(&mut rng, n), shuffled_strata(&mut rng, n));
        let normal = Normal::standard();
        let sd = fit.lambda_above.se();
        let mut v = Vec::with_capacity(n);
        for k in 0..n {
            let rate = (fit.lambda_above.rate + sd * normal.inverse_cdf(u_rate[k])).max(0.0);
            v.push(CountDraw {
                above: poisson_inverse(rate * volume, u_above[k])?,
                below: poisson_inverse(below_mean, u_below[k])?,
            });
        }
        (v, 1)
    };

    let point = (fit.params.scale, fit.params.shape);
    let (params, param_weight) = if mode == UncertaintyMode::All {
        let cov = fit.covariance.ok_or_else(|| {
            Error::CovarianceUnavailable(format!(
                "fit `{}` has no valid covariance ({} shape {:.4}); use uncertainty mode none or poisson_only",
                fit.fit_id, fit.estimator, fit.params.shape
            ))
        })?;
        let mut rng = stream(config.seed, STREAM_PARAMS);
        (sample_params(&mut rng, point.0, point.1, &cov, config.n_param_samples)?, 1)
    } else {
        (vec![point], config.n_param_samples as u64)
    };

    let mut rng = stream(config.seed, STREAM_P);
    let ln_p = stratified_ln_p(&mut rng, config.n_p_samples);
    Ok(Axes { counts, count_weight, params, param_weight, ln_p })
}

/// Largest-of-N quantile given `ln(1 − p^{1/N})`.
#[inline(always)]
fn largest(threshold: f64, scale: f64, shape: f64, ln_tail: f64) -> f64 {
    if shape.abs() < XI_SWITCH {
        threshold - scale * ln_tail
    } else {
        threshold + scale * (-shape * ln_tail).exp_m1() / shape
    }
}

/// Right-continuous inverse of the step CDF of `sorted` at `q`.
#[inline]
fn empirical_inverse(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let k = (q * m as f64).ceil() as usize;
    sorted[k.clamp(1, m) - 1]
}

/// Calls `emit(value, weight)` for one block of the product grid; returns the
/// weight that went to "no pores".
fn eval_block(
    fit: &TailFit,
    axes: &Axes,
    count: CountDraw,
    params: &[(f64, f64)],
    first_block: bool,
    ln_tail: &mut Vec<f64>,
    mut emit: impl FnMut(f64, u64),
) -> u64 {
    let mu = fit.params.threshold;
    let w = axes.count_weight * axes.param_weight;
    if count.above > 0.0 {
        ln_tail.clear();
        ln_tail.extend(axes.ln_p.iter().map(|&lp| ln_tail_of_max(lp, count.above)));
        for &(scale, shape) in params {
            for &lt in ln_tail.iter() {
                emit(largest(mu, scale, shape, lt), w);
            }
        }
        return 0;
    }
    // No exceedances: the fallback does not depend on (σ, ξ), so the first
    // block carries the weight of the whole parameter axis.
    if !first_block {
        return 0;
    }
    let wall = w * axes.params.len() as u64;
    let below = &fit.empirical_below;
    if count.below > 0.0 && !below.is_empty() {
        for &lp in &axes.ln_p {
            emit(empirical_inverse(below, (lp / count.below).exp()), wall);
        }
        0
    } else {
        wall * axes.ln_p.len() as u64
    }
}

#[derive(Default)]
struct Partial {
    counts: Vec<u64>,
    no_pore: u64,
    underflow: u64,
    overflow: u64,
    /// `(block index, weighted sum)`, reduced in block order at the end.
    sums: Vec<(usize, f64)>,
    fallback_without_data: bool,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        if self.counts.is_empty() {
            return other;
        }
        if other.counts.is_empty() {
            return self;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.no_pore += other.no_pore;
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        self.sums.extend(other.sums);
        self.fallback_without_data |= other.fallback_without_data;
        self
    }
}

/// Evenly spaced subset of at most `max` entries.
fn strided<T: Copy>(v: &[T], max: usize) -> Vec<T> {
    let step = v.len().div_ceil(max);
    v.iter().step_by(step).copied().collect()
}

fn pilot_edges(fit: &TailFit, axes: &Axes, config: &McConfig) -> Vec<f64> {
    let counts = strided(&axes.counts, PILOT_COUNTS);
    let params = strided(&axes.params, PILOT_PARAMS);
    let n_p = (PILOT_BUDGET / (counts.len() * params.len())).max(16);
    let mut rng = stream(config.seed, STREAM_PILOT_P);
    let pilot_axes = Axes {
        counts: counts.clone(),
        count_weight: 1,
        params: params.clone(),
        param_weight: 1,
        ln_p: stratified_ln_p(&mut rng, n_p),
    };
    let mut values = Vec::new();
    let mut buf = Vec::new();
    for &c in &counts {
        eval_block(fit, &pilot_axes, c, &params, true, &mut buf, |v, _| {
            if v.is_finite() {
                values.push(v)
            }
        });
    }
    values.sort_by(f64::total_cmp);

    let mu = fit.params.threshold;
    let lo = fit.empirical_below.first().map_or(mu, |&b| b.min(mu));
    let bins = config.histogram_bins;
    let mut edges = vec![lo];
    if !values.is_empty() {
        let at = |q: f64| values[((q * (values.len() - 1) as f64).round() as usize).min(values.len() - 1)];
        for k in 1..bins {
            edges.push(at(k as f64 / bins as f64));
        }
        edges.push(at(TOP_QUANTILE));
    }
    edges.retain(|e| e.is_finite());
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    if edges.len() < 2 {
        let top = edges[edges.len() - 1];
        edges.push(top + fit.params.scale.max(top.abs() * 1e-9).max(1e-12));
    }
    edges
}

/// Monte Carlo estimate of the largest-pore distribution in `voi`.
///
/// Exceedance counts come from `Poisson(λV)` with `λ` drawn from its Gaussian
/// estimate (negative rates clamp to zero), `(σ, ξ)` from the estimator's
/// asymptotic normal, and `p` from a stratified uniform sample. When a count
/// draw has no exceedances, the largest pore is read from the sub-threshold
/// empirical CDF raised to a Poisson number of sub-threshold pores; if that
/// is also zero the draw counts as "no pores".
pub fn sample_largest(fit: &TailFit, voi: VolumeOfInterest, config: &McConfig) -> Result<LargestPoreDistribution> {
    config.validate()?;
    let run = || run_engine(fit, voi, config);
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

fn run_engine(fit: &TailFit, voi: VolumeOfInterest, config: &McConfig) -> Result<LargestPoreDistribution> {
    let axes = build_axes(fit, voi.mm3(), config)?;
    let edges = pilot_edges(fit, &axes, config);
    let n_bins = edges.len() - 1;
    let top = edges[n_bins];
    let bottom = edges[0];

    let n_blocks = axes.params.len().div_ceil(PARAM_BLOCK);
    let n_items = axes.counts.len() * n_blocks;
    let partial = (0..n_items)
        .into_par_iter()
        .map(|item| {
            let (ci, bi) = (item / n_blocks, item % n_blocks);
            let params = &axes.params[bi * PARAM_BLOCK..((bi + 1) * PARAM_BLOCK).min(axes.params.len())];
            let mut part = Partial { counts: vec![0; n_bins], ..Partial::default() };
            let mut sum = 0.0;
            let mut buf = Vec::with_capacity(axes.ln_p.len());
            let count = axes.counts[ci];
            let no_pore = eval_block(fit, &axes, count, params, bi == 0, &mut buf, |v, w| {
                if v >= top {
                    part.overflow += w;
                    sum += w as f64 * v;
                } else if v >= bottom {
                    let b = edges.partition_point(|&e| e <= v) - 1;
                    part.counts[b] += w;
                    sum += w as f64 * v;
                } else {
                    part.underflow += w;
                }
            });
            part.no_pore = no_pore;
            part.fallback_without_data = no_pore > 0 && count.below > 0.0;
            part.sums.push((item, sum));
            part
        })
        .reduce(Partial::default, Partial::merge);

    let mut sums = partial.sums;
    sums.sort_by_key(|s| s.0);
    let total: u64 = partial.counts.iter().sum::<u64>() + partial.no_pore + partial.underflow + partial.overflow;
    let mean = sums.iter().map(|s| s.1).sum::<f64>() / total as f64;

    let provenance = Provenance { fit_id: fit.fit_id.clone(), volume_mm3: voi.mm3(), config: config.clone() };
    let mut dist = LargestPoreDistribution::from_parts(
        edges,
        partial.counts,
        partial.no_pore,
        partial.underflow,
        partial.overflow,
        mean,
        provenance,
    )?;
    if partial.fallback_without_data {
        dist.warnings.push(
            "draws with no exceedances found no sub-threshold record; counted as no pores".to_string(),
        );
    }
    if partial.underflow > 0 {
        dist.warnings.push(format!("{} non-finite or out-of-range draws", partial.underflow));
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::largest::{largest_cdf_closed, RateEstimate};
    use crate::tail::{mle_covariance, Estimator, GpdParams};

    pub(crate) fn synthetic_fit(scale: f64, shape: f64, n_exceed: usize, volume: f64, below: Vec<f64>) -> TailFit {
        let params = GpdParams::new(10.0, scale, shape).unwrap();
        TailFit {
            fit_id: "synthetic".into(),
            params,
            covariance: Some(mle_covariance(scale, shape, n_exceed)),
            estimator: Estimator::Mle,
            n_exceed,
            flags: vec![],
            lambda_above: RateEstimate::from_count(n_exceed, volume),
            lambda_below: RateEstimate::from_count(below.len(), volume),
            empirical_below: below,
            scanned_volume_mm3: volume,
        }
    }

    fn small(seed: u64, mode: UncertaintyMode) -> McConfig {
        McConfig {
            n_count_samples: 50,
            n_p_samples: 200,
            n_param_samples: 50,
            histogram_bins: 256,
            seed,
            uncertainty_mode: mode,
            workers: 0,
        }
    }

    #[test]
    fn none_mode_matches_closed_form() {
        let fit = synthetic_fit(3.0, 0.2, 100, 100.0, vec![]);
        let cfg = McConfig { n_p_samples: 100_000, histogram_bins: 1024, ..small(1, UncertaintyMode::None) };
        let dist = sample_largest(&fit, VolumeOfInterest::new(50.0).unwrap(), &cfg).unwrap();
        let mut ks: f64 = 0.0;
        for &e in dist.edges() {
            ks = ks.max((dist.cdf(e) - largest_cdf_closed(&fit.params, 50.0, e).unwrap()).abs());
        }
        assert!(ks < 0.002, "ks {ks}");
        assert_eq!(dist.total(), cfg.combinations() as u64);
    }

    #[test]
    fn total_probability_is_one() {
        let below: Vec<f64> = (1..100).map(|i| i as f64 * 0.1).collect();
        let fit = synthetic_fit(2.0, -0.1, 40, 200.0, below);
        for mode in [UncertaintyMode::None, UncertaintyMode::PoissonOnly, UncertaintyMode::All] {
            let dist = sample_largest(&fit, VolumeOfInterest::new(2.0).unwrap(), &small(3, mode)).unwrap();
            let mass: f64 = dist.pdf_mass().iter().sum::<f64>() + dist.no_pore_mass() + dist.overflow_mass();
            assert!((mass - 1.0).abs() < 1e-6);
            let cdf = dist.cdf_at_edges();
            assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
            assert!((cdf[cdf.len() - 1] + dist.overflow_mass() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_volume_without_sub_threshold_record_is_all_no_pores() {
        let fit = synthetic_fit(2.0, 0.1, 30, 100.0, vec![]);
        let dist = sample_largest(&fit, VolumeOfInterest::new(1e-9).unwrap(), &small(5, UncertaintyMode::All)).unwrap();
        assert_eq!(dist.no_pore_mass(), 1.0);
        assert_eq!(dist.mean(), 0.0);
    }

    #[test]
    fn refuses_all_mode_without_covariance() {
        let mut fit = synthetic_fit(2.0, 0.1, 30, 100.0, vec![]);
        fit.covariance = None;
        let err = sample_largest(&fit, VolumeOfInterest::new(10.0).unwrap(), &small(5, UncertaintyMode::All));
        assert!(matches!(err, Err(Error::CovarianceUnavailable(_))));
        assert!(sample_largest(&fit, VolumeOfInterest::new(10.0).unwrap(), &small(5, UncertaintyMode::PoissonOnly)).is_ok());
    }

    #[test]
    fn bounded_tail_stays_below_support_end() {
        let fit = synthetic_fit(2.0, -0.4, 200, 10.0, vec![]);
        let bound = fit.params.upper_bound().unwrap();
        let dist = sample_largest(&fit, VolumeOfInterest::new(1000.0).unwrap(), &small(9, UncertaintyMode::PoissonOnly)).unwrap();
        assert!(*dist.edges().last().unwrap() <= bound + 1e-9);
        assert!(dist.quantile(0.975) <= bound + 1e-9);
    }

    #[test]
    fn deterministic_for_fixed_seed_and_any_worker_count() {
        let fit = synthetic_fit(2.0, 0.1, 60, 100.0, vec![1.0, 2.0, 3.0]);
        let base = sample_largest(&fit, VolumeOfInterest::new(5.0).unwrap(), &small(17, UncertaintyMode::All)).unwrap();
        for workers in [1, 3] {
            let cfg = McConfig { workers, ..small(17, UncertaintyMode::All) };
            let d = sample_largest(&fit, VolumeOfInterest::new(5.0).unwrap(), &cfg).unwrap();
            assert_eq!(d.counts(), base.counts());
            assert_eq!(d.edges(), base.edges());
            assert_eq!(d.mean().to_bits(), base.mean().to_bits());
        }
        let other = sample_largest(&fit, VolumeOfInterest::new(5.0).unwrap(), &small(18, UncertaintyMode::All)).unwrap();
        assert_ne!(other.counts(), base.counts());
    }

    #[test]
    fn empirical_inverse_is_right_continuous() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_inverse(&s, 0.0), 1.0);
        assert_eq!(empirical_inverse(&s, 0.25), 1.0);
        assert_eq!(empirical_inverse(&s, 0.2500001), 2.0);
        assert_eq!(empirical_inverse(&s, 1.0), 4.0);
    }

    #[test]
    fn sampled_params_have_target_moments() {
        let mut rng = stream(1, 9);
        let cov = [[0.04, -0.006], [-0.006, 0.01]];
        let n = 20_000;
        let draws = sample_params(&mut rng, 2.0, 0.1, &cov, n).unwrap();
        let (ms, mx) = draws.iter().fold((0.0, 0.0), |a, d| (a.0 + d.0 / n as f64, a.1 + d.1 / n as f64));
        let mut c = [[0.0; 2]; 2];
        for d in &draws {
            let e = [d.0 - ms, d.1 - mx];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += e[i] * e[j] / (n - 1) as f64;
                }
            }
        }
        assert!((ms - 2.0).abs() < 1e-3 && (mx - 0.1).abs() < 1e-3);
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[i][j] - cov[i][j]).abs() < 0.03 * cov[i][i].max(cov[j][j]), "{c:?}");
            }
        }
    }

    #[test]
    fn sampled_params_reject_non_positive_scale() {
        let mut rng = stream(1, 9);
        let cov = [[4.0, 0.0], [0.0, 0.01]];
        let draws = sample_params(&mut rng, 0.5, 0.1, &cov, 2000).unwrap();
        assert!(draws.iter().all(|d| d.0 > 0.0));
        // Truncation matches rejection: P(σ ≤ s | σ > 0) for N(0.5, 2²).
        let normal = Normal::new(0.5, 2.0).unwrap();
        let frac = draws.iter().filter(|d| d.0 <= 1.0).count() as f64 / 2000.0;
        let expect = (normal.cdf(1.0) - normal.cdf(0.0)) / (1.0 - normal.cdf(0.0));
        assert!((frac - expect).abs() < 2e-3, "{frac} vs {expect}");
        let err = sample_params(&mut rng, 1.0, 0.1, &[[1e-4, 0.0], [0.0, 1.0]], 10);
        assert!(err.is_ok());
        assert!(sample_params(&mut rng, 1.0, 0.1, &[[1e-2, 0.0], [0.0, 1.0]], 10).is_ok());
        assert!(sample_params(&mut rng, -1.0, 0.1, &[[1e-3, 0.0], [0.0, 1.0]], 10).is_err());
    }
}
