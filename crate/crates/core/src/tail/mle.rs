//! Maximum-likelihood fit of the GPD.
//!
//! The joint likelihood is maximized through its profile in `τ = ξ/σ`: for a
//! fixed τ the optimal shape is `ξ(τ) = mean ln(1 + τy)`, which leaves a
//! one-dimensional problem. The profile is scanned on a log-spaced grid in
//! `t = τ·max(y)` and the best bracket is refined by golden-section search.
//! The shape is restricted to `ξ ≥ −1`, below which the likelihood is
//! unbounded.

use crate::error::{Error, Result};

use super::{mle_covariance, Estimator, FitFlag, GpdFit, GpdParams};

/// Largest shape the optimizer will report before declaring non-convergence.
pub const MAX_SHAPE: f64 = 10.0;
pub const MIN_SHAPE: f64 = -1.0;

struct Profile<'a> {
    /// Excesses scaled by their maximum, so the largest is exactly 1.
    scaled: &'a [f64],
    y_max: f64,
    y_mean: f64,
}

impl Profile<'_> {
    fn shape_sum(&self, t: f64) -> f64 {
        self.scaled.iter().map(|&y| (t * y).ln_1p()).sum()
    }

    /// `(σ, ξ, profile log-likelihood)` at `t`.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.scaled.len() as f64;
        if t == 0.0 {
            let sigma = self.y_mean;
            return (sigma, 0.0, -n * sigma.ln() - n);
        }
        let s = self.shape_sum(t);
        let xi = s / n;
        let sigma = xi * self.y_max / t;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return (sigma, xi, f64::NEG_INFINITY);
        }
        (sigma, xi, -n * sigma.ln() - s - n)
    }

    /// Smallest `t` with `ξ(t) ≥ −1`, or the float limit near `t = −1`.
    fn lower_t(&self) -> f64 {
        let n = self.scaled.len() as f64;
        let floor = -1.0 + 1e-12;
        if self.shape_sum(floor) >= -n {
            return floor;
        }
        let (mut lo, mut hi) = (floor, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.shape_sum(mid) < -n {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

fn grid(t_lo: f64) -> Vec<f64> {
    let mut g = vec![t_lo, 0.0];
    let mut k = 0.25;
    while k <= 12.0 {
        g.push(-(1.0 - 10f64.powf(-k)));
        k += 0.25;
    }
    let mut k = 0.0;
    while k <= 9.0 {
        g.push(-(10f64.powf(-k)));
        k += 0.25;
    }
    let mut k = -9.0;
    while k <= 7.0 {
        g.push(10f64.powf(k));
        k += 0.1;
    }
    g.retain(|&t| t >= t_lo);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

pub(crate) fn validate_exceedances(exceedances: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if exceedances.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 exceedances, got {}",
            exceedances.len()
        )));
    }
    let mut excess = Vec::with_capacity(exceedances.len());
    for &d in exceedances {
        if !d.is_finite() || d <= threshold {
            return Err(Error::domain(format!(
                "exceedance {d} is not above the threshold {threshold}"
            )));
        }
        excess.push(d - threshold);
    }
    let first = excess[0];
    if excess.iter().all(|&y| y == first) {
        return Err(Error::Fit("exceedances have zero variance".into()));
    }
    Ok(excess)
}

/// Fits `(σ, ξ)` by maximum likelihood to values strictly above `threshold`.
///
/// The Eq.-6 style asymptotic covariance is attached when `ξ̂ > −0.5`;
/// otherwise the fit is flagged and carries no covariance.
pub fn fit_mle(exceedances: &[f64], threshold: f64) -> Result<GpdFit> {
    let excess = validate_exceedances(exceedances, threshold)?;
    let n = excess.len();
    let y_max = excess.iter().copied().fold(0.0, f64::max);
    let y_mean = excess.iter().sum::<f64>() / n as f64;
    let scaled: Vec<f64> = excess.iter().map(|&y| y / y_max).collect();
    let profile = Profile { scaled: &scaled, y_max, y_mean };

    let t_lo = profile.lower_t();
    let grid = grid(t_lo);
    let values: Vec<f64> = grid.iter().map(|&t| profile.eval(t).2).collect();
    let (best, best_val) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !best_val.is_finite() {
        return Err(Error::Fit("log-likelihood is not finite anywhere on the search grid".into()));
    }
    if best == grid.len() - 1 || profile.eval(grid[best]).1 > MAX_SHAPE {
        return Err(Error::Fit(format!(
            "likelihood still increasing at shape {:.3}; no interior maximum",
            profile.eval(grid[best]).1
        )));
    }

    let t_hat = if best == 0 {
        grid[0]
    } else {
        golden_max(|t| profile.eval(t).2, grid[best - 1], grid[best + 1])
    };
    let (mut sigma, mut xi, mut ll) = profile.eval(t_hat);
    if best_val > ll {
        (sigma, xi, ll) = profile.eval(grid[best]);
    }

    let params = GpdParams::new(threshold, sigma, xi)?;
    let mut flags = Vec::new();
    if best == 0 {
        flags.push(FitFlag::ShapeAtLowerBound);
    }
    let covariance = if xi > -0.5 {
        Some(mle_covariance(sigma, xi, n))
    } else {
        flags.push(FitFlag::OutsideMleDomain);
        None
    };
    Ok(GpdFit {
        params,
        covariance,
        estimator: Estimator::Mle,
        n_exceed: n,
        flags,
        log_likelihood: ll,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}
