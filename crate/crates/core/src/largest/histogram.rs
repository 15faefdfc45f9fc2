use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::McConfig;

/// Where a distribution came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fit_id: String,
    pub volume_mm3: f64,
    pub config: McConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_um: f64,
    pub p2_5_um: f64,
    pub p50_um: f64,
    pub p97_5_um: f64,
    pub no_pore_mass: f64,
    pub overflow_mass: f64,
}

/// Histogram estimate of the largest-pore distribution.
///
/// Bin `b` covers `[edges[b], edges[b+1])` and its mass is spread uniformly,
/// so the CDF is piecewise linear between edges. Two atoms sit outside the
/// bins: "no pores in the volume" at `D = 0`, and values below the first edge
/// (only possible for non-finite draws) at `edges[0]`. Draws at or beyond the
/// last edge are overflow, kept as residual tail mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LargestPoreDistribution {
    edges: Vec<f64>,
    counts: Vec<u64>,
    no_pore: u64,
    underflow: u64,
    overflow: u64,
    total: u64,
    /// Running count through the end of each bin, bins only.
    cum: Vec<u64>,
    mean: f64,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

impl LargestPoreDistribution {
    pub fn from_parts(
        edges: Vec<f64>,
        counts: Vec<u64>,
        no_pore: u64,
        underflow: u64,
        overflow: u64,
        mean: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if edges.len() < 2 || counts.len() + 1 != edges.len() {
            return Err(Error::Format(format!(
                "histogram needs n+1 edges for n bins, got {} edges and {} bins",
                edges.len(),
                counts.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Format("histogram edges must be finite and strictly increasing".into()));
        }
        let mut cum = Vec::with_capacity(counts.len());
        let mut acc = 0u64;
        for &c in &counts {
            acc += c;
            cum.push(acc);
        }
        let total = acc + no_pore + underflow + overflow;
        if total == 0 {
            return Err(Error::Format("histogram holds no samples".into()));
        }
        Ok(Self {
            edges,
            counts,
            no_pore,
            underflow,
            overflow,
            total,
            cum,
            mean,
            provenance,
            warnings: Vec::new(),
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn no_pore_count(&self) -> u64 {
        self.no_pore
    }

    pub fn underflow_count(&self) -> u64 {
        self.underflow
    }

    pub fn overflow_count(&self) -> u64 {
        self.overflow
    }

    fn frac(&self, c: u64) -> f64 {
        c as f64 / self.total as f64
    }

    pub fn no_pore_mass(&self) -> f64 {
        self.frac(self.no_pore)
    }

    pub fn overflow_mass(&self) -> f64 {
        self.frac(self.overflow)
    }

    /// Probability mass per bin; sums to one minus the atoms and overflow.
    pub fn pdf_mass(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| self.frac(c)).collect()
    }

    /// CDF at each edge, including the no-pore atom.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        self.edges.iter().map(|&e| self.cdf(e)).collect()
    }

    /// Mean of the sampled largest-pore sizes, with "no pores" counted as 0.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Bin counts up to `x`, interpolated inside the bin holding `x`.
    fn binned_below(&self, x: f64) -> f64 {
        let last = self.edges.len() - 1;
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= self.edges[last] {
            return self.cum[last - 1] as f64;
        }
        let i = self.edges.partition_point(|&e| e <= x);
        let b = i - 1;
        let before = if b == 0 { 0 } else { self.cum[b - 1] };
        let w = (x - self.edges[b]) / (self.edges[b + 1] - self.edges[b]);
        before as f64 + self.counts[b] as f64 * w
    }

    /// `P(D ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut c = self.binned_below(x);
        if x >= 0.0 {
            c += self.no_pore as f64;
        }
        if x >= self.edges[0] {
            c += self.underflow as f64;
        }
        (c / self.total as f64).min(1.0)
    }

    /// `P(D < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        let mut c = self.binned_below(x);
        if x > 0.0 {
            c += self.no_pore as f64;
        }
        if x > self.edges[0] {
            c += self.underflow as f64;
        }
        (c / self.total as f64).min(1.0)
    }

    /// Smallest `x` with `cdf(x) ≥ q`; infinite when `q` falls in the overflow.
    pub fn quantile(&self, q: f64) -> f64 {
        let target = q.clamp(0.0, 1.0) * self.total as f64;
        let mut acc = self.no_pore as f64;
        if self.no_pore > 0 && target <= acc {
            return 0.0;
        }
        acc += self.underflow as f64;
        if target <= acc {
            return self.edges[0];
        }
        let need = target - acc;
        let b = self.cum.partition_point(|&c| (c as f64) < need);
        if b >= self.counts.len() {
            return f64::INFINITY;
        }
        let before = if b == 0 { 0.0 } else { self.cum[b - 1] as f64 };
        let w = (need - before) / self.counts[b] as f64;
        self.edges[b] + w * (self.edges[b + 1] - self.edges[b])
    }

    pub fn summary(&self) -> Summary {
        Summary {
            mean_um: self.mean,
            p2_5_um: self.quantile(0.025),
            p50_um: self.quantile(0.5),
            p97_5_um: self.quantile(0.975),
            no_pore_mass: self.no_pore_mass(),
            overflow_mass: self.overflow_mass(),
        }
    }

    /// Positions where the CDF changes slope or jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.edges.len() + 1);
        if self.no_pore > 0 {
            v.push(0.0);
        }
        v.extend_from_slice(&self.edges);
        v
    }
}
