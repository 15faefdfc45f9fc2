//! Python module `poretail`: datasets, tail fits, largest-pore distributions
//! and the comparison statistics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use poretail::equivalence::{self, ks_statistic as ks};
use poretail::geometry::{self, PoreRecord, SpecimenDataset, SpecimenMeta};
use poretail::io::{DistributionFile, FitReport};
use poretail::largest::{self, LargestPoreDistribution, McConfig, VolumeOfInterest};
use poretail::synthetic::{self, BulkSpec, GroundTruth};
use poretail::tail::{self, EstimatorPolicy, GpdParams, TailFit};
use poretail::threshold::{self, ScanOptions, SelectionMode, ThresholdChoice};

fn err(e: poretail::Error) -> PyErr {
    if e.is_statistical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for poretail::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyfunction]
fn equiv_diameter(volume_um3: f64) -> PyResult<f64> {
    geometry::equiv_diameter(volume_um3).py()
}

#[pyfunction]
fn aspect_ratio(min_feret_um: f64, max_feret_um: f64) -> PyResult<f64> {
    geometry::aspect_ratio(min_feret_um, max_feret_um).py()
}

#[pyfunction]
fn sphericity(volume_um3: f64, surface_area_um2: f64) -> PyResult<f64> {
    geometry::sphericity(volume_um3, surface_area_um2).py()
}

/// Pores of one specimen, sorted by equivalent diameter, largest first.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: SpecimenDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a pore table CSV.
    #[staticmethod]
    fn from_csv(path: PathBuf, specimen_id: &str, scanned_volume_mm3: f64) -> PyResult<Self> {
        let meta = SpecimenMeta::new(specimen_id, scanned_volume_mm3);
        Ok(Self { inner: geometry::ingest_specimen_path(&path, meta).py()? })
    }

    /// Spherical pores with the given diameters (µm).
    #[staticmethod]
    fn from_diameters(diameters: Vec<f64>, specimen_id: &str, scanned_volume_mm3: f64) -> PyResult<Self> {
        let pores = diameters
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let v = std::f64::consts::PI / 6.0 * d.powi(3);
                PoreRecord::new(i.to_string(), v, std::f64::consts::PI * d * d, d, d, None)
            })
            .collect::<poretail::Result<Vec<_>>>()
            .py()?;
        let meta = SpecimenMeta::new(specimen_id, scanned_volume_mm3);
        Ok(Self { inner: SpecimenDataset::new(meta, pores).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn specimen_id(&self) -> String {
        self.inner.meta().specimen_id.clone()
    }

    #[getter]
    fn scanned_volume_mm3(&self) -> f64 {
        self.inner.scanned_volume_mm3()
    }

    fn diameters(&self) -> Vec<f64> {
        self.inner.diameters()
    }

    fn exceedances(&self, threshold: f64) -> Vec<f64> {
        self.inner.exceedances(threshold)
    }
}

#[pyclass(name = "Gpd", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGpd {
    inner: GpdParams,
}

#[pymethods]
impl PyGpd {
    #[new]
    fn new(threshold: f64, scale: f64, shape: f64) -> PyResult<Self> {
        Ok(Self { inner: GpdParams::new(threshold, scale, shape).py()? })
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[getter]
    fn shape(&self) -> f64 {
        self.inner.shape
    }

    fn cdf(&self, d: f64) -> f64 {
        self.inner.cdf(d)
    }

    fn quantile(&self, q: f64) -> PyResult<f64> {
        self.inner.quantile(q).py()
    }

    fn mean_excess(&self, u: f64) -> PyResult<f64> {
        self.inner.mean_excess(u).py()
    }

    fn modified_scale(&self) -> f64 {
        self.inner.modified_scale()
    }

    fn upper_bound(&self) -> Option<f64> {
        self.inner.upper_bound()
    }

    fn __repr__(&self) -> String {
        format!("Gpd(threshold={}, scale={}, shape={})", self.inner.threshold, self.inner.scale, self.inner.shape)
    }
}

#[pyclass(name = "TailFit", frozen)]
struct PyTailFit {
    inner: TailFit,
}

#[pymethods]
impl PyTailFit {
    #[getter]
    fn fit_id(&self) -> String {
        self.inner.fit_id.clone()
    }

    #[getter]
    fn params(&self) -> PyGpd {
        PyGpd { inner: self.inner.params }
    }

    /// `[[var σ, cov], [cov, var ξ]]`, or None when unavailable.
    #[getter]
    fn covariance(&self) -> Option<[[f64; 2]; 2]> {
        self.inner.covariance
    }

    #[getter]
    fn estimator(&self) -> String {
        self.inner.estimator.to_string()
    }

    #[getter]
    fn n_exceed(&self) -> usize {
        self.inner.n_exceed
    }

    #[getter]
    fn lambda_above(&self) -> f64 {
        self.inner.lambda_above.rate
    }

    #[getter]
    fn lambda_above_se(&self) -> f64 {
        self.inner.lambda_above.se()
    }

    #[getter]
    fn lambda_below(&self) -> f64 {
        self.inner.lambda_below.rate
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.inner.flags.iter().map(|f| format!("{f:?}")).collect()
    }

    #[pyo3(signature = (specimen_id, manual=true))]
    fn to_toml(&self, specimen_id: &str, manual: bool) -> PyResult<String> {
        let mode = if manual { SelectionMode::Manual } else { SelectionMode::Auto };
        FitReport::new(&self.inner, specimen_id, mode).to_toml().py()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: FitReport::from_toml(text).and_then(|r| r.to_tail_fit()).py()? })
    }
}

#[pyclass(name = "Distribution", frozen)]
struct PyDistribution {
    inner: LargestPoreDistribution,
}

#[pymethods]
impl PyDistribution {
    fn cdf(&self, x: f64) -> f64 {
        self.inner.cdf(x)
    }

    fn quantile(&self, q: f64) -> f64 {
        self.inner.quantile(q)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    #[getter]
    fn volume_mm3(&self) -> f64 {
        self.inner.provenance.volume_mm3
    }

    #[getter]
    fn edges(&self) -> Vec<f64> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn no_pore_mass(&self) -> f64 {
        self.inner.no_pore_mass()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.summary();
        let d = PyDict::new(py);
        d.set_item("mean_um", s.mean_um)?;
        d.set_item("p2_5_um", s.p2_5_um)?;
        d.set_item("p50_um", s.p50_um)?;
        d.set_item("p97_5_um", s.p97_5_um)?;
        d.set_item("no_pore_mass", s.no_pore_mass)?;
        d.set_item("overflow_mass", s.overflow_mass)?;
        Ok(d)
    }

    fn to_toml(&self) -> PyResult<String> {
        DistributionFile::new(&self.inner).to_toml().py()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: DistributionFile::from_toml(text).and_then(|f| f.to_distribution()).py()? })
    }
}

/// Ground truth for synthetic specimens.
#[pyclass(name = "Truth", frozen)]
struct PyTruth {
    inner: GroundTruth,
}

#[pymethods]
impl PyTruth {
    #[new]
    #[pyo3(signature = (threshold, scale, shape, lambda_above, lambda_below, volume_mm3, bulk_median_um, bulk_log_sd=0.5))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        threshold: f64,
        scale: f64,
        shape: f64,
        lambda_above: f64,
        lambda_below: f64,
        volume_mm3: f64,
        bulk_median_um: f64,
        bulk_log_sd: f64,
    ) -> PyResult<Self> {
        let inner = GroundTruth {
            bulk: BulkSpec { median_um: bulk_median_um, log_sd: bulk_log_sd },
            tail: GpdParams::new(threshold, scale, shape).py()?,
            lambda_above,
            lambda_below,
            volume_mm3,
        };
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (seed, specimen_id="synthetic"))]
    fn specimen(&self, seed: u64, specimen_id: &str) -> PyResult<PyDataset> {
        Ok(PyDataset { inner: synthetic::generate_specimen(&self.inner, specimen_id, seed).py()? })
    }

    /// Largest pore in each of `replications` simulated volumes (0 if empty).
    fn brute_force_largest(&self, py: Python<'_>, volume_mm3: f64, replications: usize, seed: u64) -> PyResult<Vec<f64>> {
        let voi = VolumeOfInterest::new(volume_mm3).py()?;
        let cdf = py.detach(|| synthetic::brute_force_largest(&self.inner, voi, replications, seed, None)).py()?;
        Ok(cdf.values().to_vec())
    }
}

#[pyfunction]
fn default_candidates(values: Vec<f64>) -> Vec<f64> {
    threshold::default_candidates(&values)
}

/// Stability scan rows (list of dicts) and the auto-selected threshold, or
/// None when no candidate passes.
#[pyfunction]
#[pyo3(signature = (dataset, candidates=None, min_tail=tail::DEFAULT_MIN_TAIL, tolerance=threshold::DEFAULT_TOLERANCE, window=threshold::DEFAULT_WINDOW))]
fn threshold_scan<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    candidates: Option<Vec<f64>>,
    min_tail: usize,
    tolerance: f64,
    window: usize,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Option<f64>)> {
    let grid = candidates.unwrap_or_else(|| threshold::default_candidates(&dataset.inner.diameters()));
    let options = ScanOptions { min_tail, tolerance, window };
    let scan = py.detach(|| threshold::stability_scan(&dataset.inner, &grid, options)).py()?;
    let selected = threshold::select_threshold(&scan, ThresholdChoice::Auto).ok().map(|s| s.threshold);
    let rows = scan
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("threshold", r.threshold)?;
            d.set_item("n_exceed", r.n_exceed)?;
            d.set_item("mean_excess", r.mean_excess)?;
            d.set_item("sigma_hat", r.sigma_hat())?;
            d.set_item("xi_hat", r.xi_hat())?;
            d.set_item("sigma_star", r.sigma_star())?;
            d.set_item("stability_score", r.stability_score)?;
            d.set_item("passes", r.passes)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((rows, selected))
}

#[pyfunction]
#[pyo3(signature = (dataset, threshold, estimator="select", min_tail=tail::DEFAULT_MIN_TAIL))]
fn fit_tail(dataset: &PyDataset, threshold: f64, estimator: &str, min_tail: usize) -> PyResult<PyTailFit> {
    let policy: EstimatorPolicy = estimator.parse().py()?;
    Ok(PyTailFit { inner: tail::fit_tail(&dataset.inner, threshold, policy, min_tail).py()? })
}

#[pyfunction]
#[pyo3(signature = (fit, volume_mm3, seed, mode="all", samples=1000, bins=2048, workers=0))]
#[allow(clippy::too_many_arguments)]
fn sample_largest(
    py: Python<'_>,
    fit: &PyTailFit,
    volume_mm3: f64,
    seed: u64,
    mode: &str,
    samples: usize,
    bins: usize,
    workers: usize,
) -> PyResult<PyDistribution> {
    let config = McConfig {
        n_count_samples: samples,
        n_param_samples: samples,
        n_p_samples: samples,
        histogram_bins: bins,
        seed,
        uncertainty_mode: mode.parse().py()?,
        workers,
    };
    let voi = VolumeOfInterest::new(volume_mm3).py()?;
    let inner = py.detach(|| largest::sample_largest(&fit.inner, voi, &config)).py()?;
    Ok(PyDistribution { inner })
}

#[pyfunction]
fn q_value(dist: &PyDistribution, observed: f64) -> f64 {
    equivalence::q_value(&dist.inner, observed).0
}

#[pyfunction]
fn p_value(dist: &PyDistribution, observed: f64) -> f64 {
    equivalence::p_value(&dist.inner, observed)
}

#[pyfunction]
fn ks_statistic(a: &PyDistribution, b: &PyDistribution) -> f64 {
    ks(&a.inner, &b.inner)
}

#[pymodule]
#[pyo3(name = "poretail")]
fn poretail_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", poretail::VERSION)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGpd>()?;
    m.add_class::<PyTailFit>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyTruth>()?;
    m.add_function(wrap_pyfunction!(equiv_diameter, m)?)?;
    m.add_function(wrap_pyfunction!(aspect_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sphericity, m)?)?;
    m.add_function(wrap_pyfunction!(default_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_scan, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tail, m)?)?;
    m.add_function(wrap_pyfunction!(sample_largest, m)?)?;
    m.add_function(wrap_pyfunction!(q_value, m)?)?;
    m.add_function(wrap_pyfunction!(p_value, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    Ok(())
}
