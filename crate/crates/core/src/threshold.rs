//! Threshold diagnostics: the empirical mean-excess curve, a parameter
//! stability scan over candidate thresholds, and threshold selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NearMiss, Result};
use crate::geometry::SpecimenDataset;
use crate::tail::{select_estimator, GpdFit, DEFAULT_MIN_TAIL};

pub const DEFAULT_TOLERANCE: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 3;
const NEAR_MISSES: usize = 3;

/// Empirical quantiles of `values` at 50%, 51%, …, 99% (linear interpolation
/// between order statistics), deduplicated.
pub fn default_candidates(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Vec<f64> = (50..=99)
        .map(|pct| {
            let h = (n - 1) as f64 * pct as f64 / 100.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    pub mode: SelectionMode,
}

/// How [`select_threshold`] picks the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Auto,
    Manual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub min_tail: usize,
    /// Maximum standardized change over the window for a candidate to pass.
    pub tolerance: f64,
    /// Number of following candidates compared against.
    pub window: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { min_tail: DEFAULT_MIN_TAIL, tolerance: DEFAULT_TOLERANCE, window: DEFAULT_WINDOW }
    }
}

/// One threshold candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub threshold: f64,
    pub n_exceed: usize,
    pub mean_excess: f64,
    /// `None` before a stability scan, or when the fit failed.
    pub fit: Option<GpdFit>,
    pub stability_score: Option<f64>,
    pub passes: bool,
}

impl CandidateRow {
    pub fn sigma_hat(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.params.scale)
    }

    pub fn xi_hat(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.params.shape)
    }

    /// `σ̂ − ξ̂µ`, constant in µ for an exact GPD tail.
    pub fn sigma_star(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.params.modified_scale())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdScan {
    pub rows: Vec<CandidateRow>,
    pub options: ScanOptions,
    pub warnings: Vec<String>,
    pub selected: Option<Selection>,
}

impl ThresholdScan {
    pub fn thresholds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.threshold).collect()
    }

    pub fn mean_excess(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_excess).collect()
    }

    /// Least-squares slope and intercept of mean excess against threshold.
    pub fn mean_excess_fit(&self) -> Option<(f64, f64)> {
        let n = self.rows.len();
        if n < 2 {
            return None;
        }
        let nf = n as f64;
        let mx = self.rows.iter().map(|r| r.threshold).sum::<f64>() / nf;
        let my = self.rows.iter().map(|r| r.mean_excess).sum::<f64>() / nf;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for r in &self.rows {
            sxy += (r.threshold - mx) * (r.mean_excess - my);
            sxx += (r.threshold - mx).powi(2);
        }
        if sxx == 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        Some((slope, my - slope * mx))
    }
}

fn sorted_candidates(candidates: &[f64]) -> Result<Vec<f64>> {
    if candidates.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("threshold candidates must be finite"));
    }
    let mut c = candidates.to_vec();
    c.sort_by(f64::total_cmp);
    c.dedup();
    Ok(c)
}

/// Empirical mean excess at each candidate. Candidates leaving fewer than two
/// exceedances are dropped with a warning.
pub fn mean_excess_curve(dataset: &SpecimenDataset, candidates: &[f64]) -> Result<ThresholdScan> {
    let candidates = sorted_candidates(candidates)?;
    let mut rows = Vec::with_capacity(candidates.len());
    let mut warnings = Vec::new();
    for mu in candidates {
        let exceed = dataset.exceedances(mu);
        if exceed.len() < 2 {
            warnings.push(format!("candidate {mu} um leaves {} exceedances; excluded", exceed.len()));
            continue;
        }
        let mean_excess = exceed.iter().map(|d| d - mu).sum::<f64>() / exceed.len() as f64;
        rows.push(CandidateRow {
            threshold: mu,
            n_exceed: exceed.len(),
            mean_excess,
            fit: None,
            stability_score: None,
            passes: false,
        });
    }
    Ok(ThresholdScan { rows, options: ScanOptions::default(), warnings, selected: None })
}

/// Largest standardized change in shape and modified scale from `row` to any
/// of the following rows. Each change is measured in standard errors at `row`.
fn stability_score(row: &CandidateRow, following: &[&CandidateRow]) -> Option<f64> {
    let fit = row.fit.as_ref()?;
    let se_xi = fit.se_shape()?;
    let se_star = fit.se_modified_scale()?;
    if following.is_empty() || !(se_xi > 0.0) || !(se_star > 0.0) {
        return None;
    }
    let (xi, star) = (fit.params.shape, fit.params.modified_scale());
    following
        .iter()
        .filter_map(|r| r.fit.as_ref())
        .map(|f| {
            let dxi = (f.params.shape - xi).abs() / se_xi;
            let dstar = (f.params.modified_scale() - star).abs() / se_star;
            dxi.max(dstar)
        })
        .reduce(f64::max)
}

/// Fits every candidate with at least `min_tail` exceedances and scores how
/// stable the shape and modified scale are over the next `window` candidates.
/// A candidate passes when its score is at most `tolerance`; the last
/// candidates, lacking successors, have no score and never pass.
pub fn stability_scan(dataset: &SpecimenDataset, candidates: &[f64], options: ScanOptions) -> Result<ThresholdScan> {
    if options.window == 0 || !(options.tolerance > 0.0) {
        return Err(Error::Config("stability window and tolerance must be positive".into()));
    }
    let mut scan = mean_excess_curve(dataset, candidates)?;
    scan.options = options;
    let min_tail = options.min_tail.max(2);
    scan.rows.retain(|r| r.n_exceed >= min_tail);
    if scan.rows.is_empty() {
        return Err(Error::TooFewExceedances {
            found: candidates.iter().map(|&c| dataset.exceedances(c).len()).max().unwrap_or(0),
            required: min_tail,
        });
    }
    let fits: Vec<Result<GpdFit>> = scan
        .rows
        .par_iter()
        .map(|r| select_estimator(&dataset.exceedances(r.threshold), r.threshold))
        .collect();
    for (row, fit) in scan.rows.iter_mut().zip(fits) {
        match fit {
            Ok(f) => row.fit = Some(f),
            Err(e) => scan.warnings.push(format!("candidate {} um unusable: {e}", row.threshold)),
        }
    }
    let usable: Vec<usize> = (0..scan.rows.len()).filter(|&i| scan.rows[i].fit.is_some()).collect();
    for (k, &i) in usable.iter().enumerate() {
        let following: Vec<&CandidateRow> =
            usable[k + 1..].iter().take(options.window).map(|&j| &scan.rows[j]).collect();
        let score = stability_score(&scan.rows[i], &following);
        scan.rows[i].stability_score = score;
        scan.rows[i].passes = score.is_some_and(|s| s <= options.tolerance);
    }
    Ok(scan)
}

/// Auto: the smallest passing candidate. Manual: the given value, unchanged.
pub fn select_threshold(scan: &ThresholdScan, choice: ThresholdChoice) -> Result<Selection> {
    match choice {
        ThresholdChoice::Manual(v) => {
            if !v.is_finite() {
                return Err(Error::domain(format!("manual threshold must be finite, got {v}")));
            }
            Ok(Selection { threshold: v, mode: SelectionMode::Manual })
        }
        ThresholdChoice::Auto => {
            let min_tail = scan.options.min_tail;
            if let Some(r) = scan.rows.iter().find(|r| r.passes && r.n_exceed >= min_tail) {
                return Ok(Selection { threshold: r.threshold, mode: SelectionMode::Auto });
            }
            let mut misses: Vec<NearMiss> = scan
                .rows
                .iter()
                .map(|r| NearMiss { threshold: r.threshold, n_exceed: r.n_exceed, score: r.stability_score })
                .collect();
            misses.sort_by(|a, b| match (a.score, b.score) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.threshold.total_cmp(&b.threshold),
            });
            misses.truncate(NEAR_MISSES);
            Err(Error::NoStableThreshold { near_misses: misses })
        }
    }
}

/// Runs the scan on the default grid (or `candidates`) and selects a threshold.
pub fn scan_and_select(
    dataset: &SpecimenDataset,
    candidates: Option<&[f64]>,
    options: ScanOptions,
    choice: ThresholdChoice,
) -> Result<ThresholdScan> {
    let grid = match candidates {
        Some(c) => c.to_vec(),
        None => default_candidates(&dataset.diameters()),
    };
    let mut scan = stability_scan(dataset, &grid, options)?;
    scan.selected = Some(select_threshold(&scan, choice)?);
    Ok(scan)
}
