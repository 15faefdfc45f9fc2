//! Agreement between an observed largest pore and an estimated largest-pore
//! distribution: q-values, p-values, KS distances and location scatter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SpecimenMeta;
use crate::largest::{largest_cdf_closed, LargestPoreDistribution};
use crate::tail::GpdParams;

/// A distribution function that can be compared on a merged grid.
pub trait Cdf {
    /// `P(X ≤ x)`.
    fn cdf(&self, x: f64) -> f64;
    /// `P(X < x)`.
    fn cdf_left(&self, x: f64) -> f64;
    /// Points where the function jumps or changes slope. Between consecutive
    /// breakpoints it must be linear or constant.
    fn breakpoints(&self) -> Vec<f64>;
}

impl Cdf for LargestPoreDistribution {
    fn cdf(&self, x: f64) -> f64 {
        LargestPoreDistribution::cdf(self, x)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        LargestPoreDistribution::cdf_left(self, x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        LargestPoreDistribution::breakpoints(self)
    }
}

/// Step CDF of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empirical CDF needs at least one value"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::domain("empirical CDF values must not be NaN"));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.sorted.len() as f64
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut v = self.sorted.clone();
        v.dedup();
        v
    }
}

/// Finite set of weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() || atoms.iter().any(|a| !a.0.is_finite() || !(a.1 >= 0.0)) {
            return Err(Error::domain("atoms need finite positions and non-negative weights"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total > 0.0) {
            return Err(Error::domain("atom weights sum to zero"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        for a in &mut atoms {
            a.1 /= total;
        }
        Ok(Self { atoms })
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum()
    }
}

impl Cdf for DiscreteDistribution {
    fn cdf(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum::<f64>().min(1.0)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 < x).map(|a| a.1).sum::<f64>().min(1.0)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.0).collect()
    }
}

/// Closed-form largest-of-N CDF, tabulated on a fixed grid for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormLargest {
    pub params: GpdParams,
    pub n_pores: f64,
    grid: Vec<f64>,
}

impl ClosedFormLargest {
    /// Tabulates at `grid` plus the threshold (and the support end if any).
    pub fn new(params: GpdParams, n_pores: f64, grid: &[f64]) -> Result<Self> {
        largest_cdf_closed(&params, n_pores, params.threshold)?;
        let mut g: Vec<f64> = grid.iter().copied().filter(|x| x.is_finite()).collect();
        g.push(params.threshold);
        g.extend(params.upper_bound());
        g.sort_by(f64::total_cmp);
        g.dedup();
        Ok(Self { params, n_pores, grid: g })
    }
}

impl Cdf for ClosedFormLargest {
    fn cdf(&self, x: f64) -> f64 {
        largest_cdf_closed(&self.params, self.n_pores, x).unwrap_or(0.0)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.grid.clone()
    }
}

/// `sup |F_a − F_b|` over the merged breakpoints, checking both the value and
/// the left limit at each point so jumps are counted in full.
pub fn ks_statistic(a: &dyn Cdf, b: &dyn Cdf) -> f64 {
    let mut grid = a.breakpoints();
    grid.extend(b.breakpoints());
    grid.retain(|x| !x.is_nan());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut d: f64 = 0.0;
    for &x in &grid {
        d = d.max((a.cdf(x) - b.cdf(x)).abs());
        d = d.max((a.cdf_left(x) - b.cdf_left(x)).abs());
    }
    d.min(1.0)
}

/// Where an observation fell relative to the histogram range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeFlag {
    Inside,
    BelowRange,
    /// Beyond the last edge, in the overflow tail.
    AboveRange,
}

/// `CDF(observed)`, linearly interpolated inside bins.
pub fn q_value(dist: &LargestPoreDistribution, observed: f64) -> (f64, RangeFlag) {
    let edges = dist.edges();
    let q = dist.cdf(observed);
    let flag = if observed < edges[0] && observed != 0.0 {
        RangeFlag::BelowRange
    } else if observed >= edges[edges.len() - 1] {
        RangeFlag::AboveRange
    } else {
        RangeFlag::Inside
    };
    (q, flag)
}

/// Two-sided `P(|D − mean| ≥ |observed − mean|)`.
///
/// Overflow mass is treated as lying beyond any finite observation.
pub fn p_value(dist: &LargestPoreDistribution, observed: f64) -> f64 {
    two_sided(dist, dist.mean(), observed)
}

/// Two-sided p-value of `observed` under any CDF with the given mean.
pub fn two_sided(cdf: &dyn Cdf, mean: f64, observed: f64) -> f64 {
    let r = (observed - mean).abs();
    if r == 0.0 {
        return 1.0;
    }
    (cdf.cdf(mean - r) + 1.0 - cdf.cdf_left(mean + r)).clamp(0.0, 1.0)
}

/// One-sided `P(D ≥ observed)`.
pub fn upper_tail(dist: &LargestPoreDistribution, observed: f64) -> f64 {
    (1.0 - dist.cdf_left(observed)).clamp(0.0, 1.0)
}

/// Build-plate position in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatePosition {
    pub x_mm: f64,
    pub y_mm: f64,
}

/// Rectangular build-plate extents in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateExtents {
    pub x_min_mm: f64,
    pub x_max_mm: f64,
    pub y_min_mm: f64,
    pub y_max_mm: f64,
}

impl PlateExtents {
    pub fn center(&self) -> PlatePosition {
        PlatePosition {
            x_mm: 0.5 * (self.x_min_mm + self.x_max_mm),
            y_mm: 0.5 * (self.y_min_mm + self.y_max_mm),
        }
    }
}

/// Straight-line distance and difference in distance from `center`.
pub fn plate_distances(coupon: PlatePosition, part: PlatePosition, center: PlatePosition) -> (f64, f64) {
    let cartesian = (part.x_mm - coupon.x_mm).hypot(part.y_mm - coupon.y_mm);
    let r_coupon = (coupon.x_mm - center.x_mm).hypot(coupon.y_mm - center.y_mm);
    let r_part = (part.x_mm - center.x_mm).hypot(part.y_mm - center.y_mm);
    (cartesian, (r_part - r_coupon).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub coupon_fit_id: String,
    pub part_specimen_id: String,
    pub observed_largest_um: f64,
    pub q_value: f64,
    pub p_value: f64,
    pub upper_tail: f64,
    pub volume_mm3: f64,
    pub range_flag: RangeFlag,
    pub coupon_position: Option<PlatePosition>,
    pub part_position: Option<PlatePosition>,
    pub cartesian_distance_mm: Option<f64>,
    pub radial_distance_mm: Option<f64>,
}

fn position_of(meta: Option<&SpecimenMeta>) -> Option<PlatePosition> {
    meta.and_then(|m| m.build_location()).map(|(x, y)| PlatePosition { x_mm: x, y_mm: y })
}

/// Compares one part observation against a coupon distribution. Distances
/// are filled when both positions and the plate center are known.
pub fn compare(
    dist: &LargestPoreDistribution,
    part_specimen_id: impl Into<String>,
    observed_largest_um: f64,
    coupon_position: Option<PlatePosition>,
    part_position: Option<PlatePosition>,
    plate: Option<PlateExtents>,
) -> Result<EquivalenceReport> {
    if !observed_largest_um.is_finite() || observed_largest_um < 0.0 {
        return Err(Error::domain(format!("observed largest pore must be a non-negative size, got {observed_largest_um}")));
    }
    let (q, flag) = q_value(dist, observed_largest_um);
    let distances = match (coupon_position, part_position, plate) {
        (Some(c), Some(p), Some(ext)) => Some(plate_distances(c, p, ext.center())),
        _ => None,
    };
    Ok(EquivalenceReport {
        coupon_fit_id: dist.provenance.fit_id.clone(),
        part_specimen_id: part_specimen_id.into(),
        observed_largest_um,
        q_value: q,
        p_value: p_value(dist, observed_largest_um),
        upper_tail: upper_tail(dist, observed_largest_um),
        volume_mm3: dist.provenance.volume_mm3,
        range_flag: flag,
        coupon_position,
        part_position,
        cartesian_distance_mm: distances.map(|d| d.0),
        radial_distance_mm: distances.map(|d| d.1),
    })
}

/// Same as [`compare`] with positions taken from specimen metadata.
pub fn compare_specimens(
    dist: &LargestPoreDistribution,
    coupon: Option<&SpecimenMeta>,
    part: &SpecimenMeta,
    observed_largest_um: f64,
    plate: Option<PlateExtents>,
) -> Result<EquivalenceReport> {
    compare(dist, part.specimen_id.clone(), observed_largest_um, position_of(coupon), position_of(Some(part)), plate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub pair_id: String,
    pub cartesian_distance_mm: f64,
    pub radial_distance_mm: f64,
    pub p_value: f64,
    pub q_value: f64,
}

/// Distance-versus-agreement rows. Reports lacking a position are skipped
/// and named in the returned warnings.
pub fn location_scatter(reports: &[EquivalenceReport], plate: PlateExtents) -> (Vec<ScatterRow>, Vec<String>) {
    let center = plate.center();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for r in reports {
        let pair_id = format!("{}|{}", r.coupon_fit_id, r.part_specimen_id);
        match (r.coupon_position, r.part_position) {
            (Some(c), Some(p)) => {
                let (cartesian, radial) = plate_distances(c, p, center);
                rows.push(ScatterRow {
                    pair_id,
                    cartesian_distance_mm: cartesian,
                    radial_distance_mm: radial,
                    p_value: r.p_value,
                    q_value: r.q_value,
                });
            }
            _ => warnings.push(format!("pair {pair_id} skipped: build-plate position missing")),
        }
    }
    (rows, warnings)
}

/// KS distances between uncertainty modes at one volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeKsRow {
    pub volume_mm3: f64,
    pub none_vs_poisson_only: f64,
    pub none_vs_all: f64,
    pub poisson_only_vs_all: f64,
}

pub fn mode_ks_row(
    volume_mm3: f64,
    none: &LargestPoreDistribution,
    poisson_only: &LargestPoreDistribution,
    all: &LargestPoreDistribution,
) -> ModeKsRow {
    ModeKsRow {
        volume_mm3,
        none_vs_poisson_only: ks_statistic(none, poisson_only),
        none_vs_all: ks_statistic(none, all),
        poisson_only_vs_all: ks_statistic(poisson_only, all),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::largest::{McConfig, Provenance};
    use proptest::prelude::*;

    fn hist(edges: Vec<f64>, counts: Vec<u64>, no_pore: u64, overflow: u64, mean: f64) -> LargestPoreDistribution {
        let prov = Provenance { fit_id: "c".into(), volume_mm3: 1.0, config: McConfig::default() };
        LargestPoreDistribution::from_parts(edges, counts, no_pore, 0, overflow, mean, prov).unwrap()
    }

    fn steps(v: &[f64]) -> EmpiricalCdf {
        EmpiricalCdf::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ks_examples() {
        let a = steps(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &steps(&[3.0, 4.0, 5.0, 6.0])), 0.5);
        assert_eq!(ks_statistic(&a, &steps(&[10.0, 11.0])), 1.0);
    }

    #[test]
    fn ks_counts_jump_against_continuous_cdf() {
        // Atom at 1 versus a uniform ramp on [0, 2]: largest gap is 0.5 on
        // either side of the jump.
        let atom = DiscreteDistribution::new(vec![(1.0, 1.0)]).unwrap();
        let ramp = hist(vec![0.0, 2.0], vec![10], 0, 0, 1.0);
        assert!((ks_statistic(&atom, &ramp) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn q_value_at_median_and_bounds() {
        let d = hist(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![10, 20, 20, 10], 0, 0, 2.0);
        let med = d.quantile(0.5);
        assert!((q_value(&d, med).0 - 0.5).abs() < 1e-12);
        assert_eq!(q_value(&d, -1.0).0, 0.0);
        assert_eq!(q_value(&d, 10.0), (1.0, RangeFlag::AboveRange));
        let d = hist(vec![5.0, 6.0], vec![10], 0, 0, 5.5);
        assert_eq!(q_value(&d, 1.0), (0.0, RangeFlag::BelowRange));
    }

    #[test]
    fn overflow_keeps_q_below_one() {
        let d = hist(vec![0.0, 1.0], vec![9], 0, 1, 0.6);
        let (q, flag) = q_value(&d, 5.0);
        assert!((q - 0.9).abs() < 1e-15);
        assert_eq!(flag, RangeFlag::AboveRange);
    }

    #[test]
    fn p_value_examples() {
        let d = hist(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![10, 20, 20, 10], 0, 0, 2.0);
        assert_eq!(p_value(&d, 2.0), 1.0);
        assert_eq!(p_value(&d, 100.0), 0.0);
        let two = DiscreteDistribution::new(vec![(1.0, 1.0), (3.0, 1.0)]).unwrap();
        assert_eq!(two_sided(&two, two.mean(), 3.0), 1.0);
        let point = DiscreteDistribution::new(vec![(2.0, 1.0)]).unwrap();
        assert_eq!(two_sided(&point, 2.0, 2.0), 1.0);
        assert_eq!(two_sided(&point, 2.0, 2.5), 0.0);
    }

    #[test]
    fn no_pore_atom_enters_p_and_q() {
        let d = hist(vec![4.0, 6.0], vec![5], 5, 0, 2.5);
        assert_eq!(q_value(&d, 0.0).0, 0.5);
        // |0 − 2.5| = 2.5: atom at 0 and everything at or above 5.
        assert!((p_value(&d, 0.0) - 0.75).abs() < 1e-15);
        assert!((upper_tail(&d, 5.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn plate_distance_examples() {
        let o = PlatePosition { x_mm: 0.0, y_mm: 0.0 };
        let p = PlatePosition { x_mm: 3.0, y_mm: 4.0 };
        assert_eq!(plate_distances(o, p, o), (5.0, 5.0));
        assert_eq!(plate_distances(p, p, o), (0.0, 0.0));
        let q = PlatePosition { x_mm: 4.0, y_mm: 3.0 };
        let (c, r) = plate_distances(p, q, o);
        assert!(c > 0.0 && r.abs() < 1e-15);
        let ext = PlateExtents { x_min_mm: -10.0, x_max_mm: 10.0, y_min_mm: 0.0, y_max_mm: 20.0 };
        assert_eq!(ext.center(), PlatePosition { x_mm: 0.0, y_mm: 10.0 });
    }

    #[test]
    fn scatter_skips_missing_positions() {
        let d = hist(vec![0.0, 1.0], vec![10], 0, 0, 0.5);
        let ext = PlateExtents { x_min_mm: -1.0, x_max_mm: 1.0, y_min_mm: -1.0, y_max_mm: 1.0 };
        let with = compare(&d, "a", 0.5, Some(PlatePosition { x_mm: 0.0, y_mm: 0.0 }), Some(PlatePosition { x_mm: 3.0, y_mm: 4.0 }), Some(ext)).unwrap();
        let without = compare(&d, "b", 0.5, None, None, Some(ext)).unwrap();
        assert!(without.cartesian_distance_mm.is_none());
        let (rows, warnings) = location_scatter(&[with, without], ext);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cartesian_distance_mm, 5.0);
        assert_eq!(warnings.len(), 1);
    }

    fn small_sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0i32..20).prop_map(|v| v as f64 * 0.5), 1..12)
    }

    proptest! {
        #[test]
        fn ks_is_a_metric(a in small_sample(), b in small_sample(), c in small_sample()) {
            let (a, b, c) = (steps(&a), steps(&b), steps(&c));
            let ab = ks_statistic(&a, &b);
            prop_assert_eq!(ab, ks_statistic(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ab <= ks_statistic(&a, &c) + ks_statistic(&c, &b) + 1e-12);
        }

        #[test]
        fn q_value_is_monotone(x in -1.0f64..6.0, dx in 0.0f64..3.0) {
            let d = hist(vec![0.5, 1.0, 2.0, 4.0], vec![3, 5, 2], 2, 1, 1.5);
            prop_assert!(q_value(&d, x).0 <= q_value(&d, x + dx).0);
        }

        #[test]
        fn p_value_is_one_at_the_mean(counts in prop::collection::vec(0u64..50, 4), no_pore in 0u64..10) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let d = hist(vec![1.0, 2.0, 3.0, 4.0, 5.0], counts, no_pore, 0, 2.7);
            prop_assert_eq!(p_value(&d, d.mean()), 1.0);
        }
    }
}
