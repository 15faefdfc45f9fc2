//! Poisson occurrence rates per unit volume.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::SpecimenDataset;

/// A rate estimate `count / volume` with variance `rate / count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: usize,
    pub volume_mm3: f64,
    /// Pores per mm³.
    pub rate: f64,
    pub variance: f64,
}

impl RateEstimate {
    pub fn from_count(count: usize, volume_mm3: f64) -> Self {
        let rate = count as f64 / volume_mm3;
        let variance = if count == 0 { 0.0 } else { rate / count as f64 };
        Self { count, volume_mm3, rate, variance }
    }

    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }

    /// No pores were counted; count uncertainty cannot be propagated.
    pub fn is_degenerate(&self) -> bool {
        self.count == 0
    }
}

/// Rates above (strictly) and at-or-below `threshold`.
pub fn estimate_rates(dataset: &SpecimenDataset, threshold: f64) -> Result<(RateEstimate, RateEstimate)> {
    dataset.meta().validate()?;
    let above = dataset.exceedances(threshold).len();
    let below = dataset.len() - above;
    let v = dataset.scanned_volume_mm3();
    Ok((RateEstimate::from_count(above, v), RateEstimate::from_count(below, v)))
}
