//! File formats: TOML fit reports and distribution files, and CSV tables
//! stamped with `# key=value` provenance lines.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equivalence::{EquivalenceReport, ModeKsRow, ScatterRow};
use crate::error::{Error, Result};
use crate::largest::{LargestPoreDistribution, McConfig, Provenance, RateEstimate, SweepRow};
use crate::tail::{Estimator, FitFlag, GpdParams, TailFit};
use crate::threshold::{SelectionMode, ThresholdScan};
use crate::VERSION;

pub const FIT_FORMAT: &str = "poretail-fit/1";
pub const DISTRIBUTION_FORMAT: &str = "poretail-distribution/1";

/// Serialized [`TailFit`] plus how its threshold was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format: String,
    pub toolkit_version: String,
    pub fit_id: String,
    pub specimen_id: String,
    pub scanned_volume_mm3: f64,
    pub threshold_um: f64,
    pub threshold_mode: SelectionMode,
    pub estimator: Estimator,
    pub sigma_um: f64,
    pub xi: f64,
    pub covariance_available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_sigma_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_sigma_xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_xi_xi: Option<f64>,
    pub n_exceed: usize,
    pub lambda_above_per_mm3: f64,
    pub lambda_above_se: f64,
    pub n_below: usize,
    pub lambda_below_per_mm3: f64,
    pub lambda_below_se: f64,
    #[serde(default)]
    pub flags: Vec<FitFlag>,
    /// Sub-threshold diameters, ascending.
    #[serde(default)]
    pub empirical_below_um: Vec<f64>,
}

impl FitReport {
    pub fn new(fit: &TailFit, specimen_id: &str, threshold_mode: SelectionMode) -> Self {
        let cov = fit.covariance;
        Self {
            format: FIT_FORMAT.into(),
            toolkit_version: VERSION.into(),
            fit_id: fit.fit_id.clone(),
            specimen_id: specimen_id.into(),
            scanned_volume_mm3: fit.scanned_volume_mm3,
            threshold_um: fit.params.threshold,
            threshold_mode,
            estimator: fit.estimator,
            sigma_um: fit.params.scale,
            xi: fit.params.shape,
            covariance_available: cov.is_some(),
            cov_sigma_sigma: cov.map(|c| c[0][0]),
            cov_sigma_xi: cov.map(|c| c[0][1]),
            cov_xi_xi: cov.map(|c| c[1][1]),
            n_exceed: fit.n_exceed,
            lambda_above_per_mm3: fit.lambda_above.rate,
            lambda_above_se: fit.lambda_above.se(),
            n_below: fit.lambda_below.count,
            lambda_below_per_mm3: fit.lambda_below.rate,
            lambda_below_se: fit.lambda_below.se(),
            flags: fit.flags.clone(),
            empirical_below_um: fit.empirical_below.clone(),
        }
    }

    pub fn to_tail_fit(&self) -> Result<TailFit> {
        if self.format != FIT_FORMAT {
            return Err(Error::Format(format!("expected fit report format `{FIT_FORMAT}`, found `{}`", self.format)));
        }
        if !(self.scanned_volume_mm3 > 0.0) {
            return Err(Error::Format("fit report scanned volume must be positive".into()));
        }
        let params = GpdParams::new(self.threshold_um, self.sigma_um, self.xi)?;
        let covariance = match (self.covariance_available, self.cov_sigma_sigma, self.cov_sigma_xi, self.cov_xi_xi) {
            (false, ..) => None,
            (true, Some(ss), Some(sx), Some(xx)) => Some([[ss, sx], [sx, xx]]),
            (true, ..) => return Err(Error::Format("covariance marked available but entries are missing".into())),
        };
        if self.empirical_below_um.len() != self.n_below {
            return Err(Error::Format(format!(
                "n_below is {} but {} sub-threshold sizes are listed",
                self.n_below,
                self.empirical_below_um.len()
            )));
        }
        let mut below = self.empirical_below_um.clone();
        below.sort_by(f64::total_cmp);
        Ok(TailFit {
            fit_id: self.fit_id.clone(),
            params,
            covariance,
            estimator: self.estimator,
            n_exceed: self.n_exceed,
            flags: self.flags.clone(),
            lambda_above: RateEstimate::from_count(self.n_exceed, self.scanned_volume_mm3),
            lambda_below: RateEstimate::from_count(self.n_below, self.scanned_volume_mm3),
            empirical_below: below,
            scanned_volume_mm3: self.scanned_volume_mm3,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("fit report: {e}")))
    }
}

/// Sampling settings that determine a Monte Carlo result. The worker count
/// is left out since it does not change the output.
#[derive(Serialize)]
struct HashedConfig<'a> {
    fit_id: &'a str,
    volume_mm3: f64,
    n_count_samples: usize,
    n_p_samples: usize,
    n_param_samples: usize,
    histogram_bins: usize,
    seed: u64,
    uncertainty_mode: String,
}

/// First 16 hex digits of the SHA-256 of the run settings.
pub fn config_hash(fit_id: &str, volume_mm3: f64, config: &McConfig) -> String {
    let h = HashedConfig {
        fit_id,
        volume_mm3,
        n_count_samples: config.n_count_samples,
        n_p_samples: config.n_p_samples,
        n_param_samples: config.n_param_samples,
        histogram_bins: config.histogram_bins,
        seed: config.seed,
        uncertainty_mode: config.uncertainty_mode.to_string(),
    };
    let text = toml::to_string(&h).expect("plain struct serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Provenance lines written at the top of every exported table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stamp {
    pub entries: Vec<(String, String)>,
}

impl Stamp {
    pub fn new() -> Self {
        Self { entries: vec![("toolkit_version".into(), VERSION.into())] }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn for_run(fit_id: &str, volume_mm3: f64, config: &McConfig) -> Self {
        Self::new()
            .with("fit_id", fit_id)
            .with("seed", config.seed)
            .with("config_hash", config_hash(fit_id, volume_mm3, config))
            .sampling(config)
    }

    /// One hash over the per-volume hashes, in order.
    pub fn for_sweep(fit_id: &str, volumes_mm3: &[f64], config: &McConfig) -> Self {
        let joined = volumes_mm3.iter().map(|&v| config_hash(fit_id, v, config)).collect::<Vec<_>>().join(",");
        let volumes = volumes_mm3.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        Self::new()
            .with("fit_id", fit_id)
            .with("seed", config.seed)
            .with("config_hash", hex::encode(&Sha256::digest(joined.as_bytes())[..8]))
            .sampling(config)
            .with("volumes_mm3", volumes)
            .with("uncertainty_mode", config.uncertainty_mode)
    }

    fn sampling(self, config: &McConfig) -> Self {
        self.with("n_count_samples", config.n_count_samples)
            .with("n_param_samples", config.n_param_samples)
            .with("n_p_samples", config.n_p_samples)
            .with("histogram_bins", config.histogram_bins)
    }

    pub fn for_distribution(dist: &LargestPoreDistribution) -> Self {
        let p = &dist.provenance;
        Self::for_run(&p.fit_id, p.volume_mm3, &p.config)
            .with("volume_mm3", p.volume_mm3)
            .with("uncertainty_mode", p.config.uncertainty_mode)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }
}

/// Reads the `# key=value` lines from the top of a table.
pub fn read_stamp(text: &str) -> Stamp {
    let entries = text
        .lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Stamp { entries }
}

fn table<W: Write>(mut w: W, stamp: &Stamp, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    stamp.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    for r in rows {
        csv.write_record(&r)?;
    }
    csv.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `edge_um,cdf` at every histogram edge.
pub fn write_cdf_table<W: Write>(dist: &LargestPoreDistribution, w: W) -> Result<()> {
    let rows = dist.edges().iter().zip(dist.cdf_at_edges()).map(|(e, c)| vec![e.to_string(), c.to_string()]);
    table(w, &Stamp::for_distribution(dist), &["edge_um", "cdf"], rows)
}

const SUMMARY_HEADER: [&str; 7] = ["volume_mm3", "mean_um", "p2_5_um", "p50_um", "p97_5_um", "no_pore_mass", "overflow_mass"];

pub fn write_summary<W: Write>(dist: &LargestPoreDistribution, w: W) -> Result<()> {
    let row = SweepRow { volume_mm3: dist.provenance.volume_mm3, summary: dist.summary() };
    table(w, &Stamp::for_distribution(dist), &SUMMARY_HEADER, [summary_row(&row)])
}

fn summary_row(r: &SweepRow) -> Vec<String> {
    let s = &r.summary;
    [r.volume_mm3, s.mean_um, s.p2_5_um, s.p50_um, s.p97_5_um, s.no_pore_mass, s.overflow_mass]
        .iter()
        .map(f64::to_string)
        .collect()
}

pub fn write_sweep_table<W: Write>(rows: &[SweepRow], stamp: &Stamp, w: W) -> Result<()> {
    table(w, stamp, &SUMMARY_HEADER, rows.iter().map(summary_row))
}

pub fn write_scan_table<W: Write>(scan: &ThresholdScan, stamp: &Stamp, w: W) -> Result<()> {
    let header = ["threshold", "n_exceed", "mean_excess", "sigma_hat", "xi_hat", "sigma_star", "stability_score", "passes"];
    let rows = scan.rows.iter().map(|r| {
        vec![
            r.threshold.to_string(),
            r.n_exceed.to_string(),
            r.mean_excess.to_string(),
            opt(r.sigma_hat()),
            opt(r.xi_hat()),
            opt(r.sigma_star()),
            opt(r.stability_score),
            r.passes.to_string(),
        ]
    });
    table(w, stamp, &header, rows)
}

pub fn write_qq_table<W: Write>(points: &[(f64, f64)], stamp: &Stamp, w: W) -> Result<()> {
    let rows = points.iter().map(|(t, s)| vec![t.to_string(), s.to_string()]);
    table(w, stamp, &["theoretical_um", "sample_um"], rows)
}

pub fn write_reports<W: Write>(reports: &[EquivalenceReport], stamp: &Stamp, w: W) -> Result<()> {
    let header = [
        "coupon_fit_id",
        "part_specimen_id",
        "volume_mm3",
        "observed_largest_um",
        "p_value",
        "q_value",
        "upper_tail",
        "range_flag",
        "cartesian_distance_mm",
        "radial_distance_mm",
    ];
    let rows = reports.iter().map(|r| {
        vec![
            r.coupon_fit_id.clone(),
            r.part_specimen_id.clone(),
            r.volume_mm3.to_string(),
            r.observed_largest_um.to_string(),
            r.p_value.to_string(),
            r.q_value.to_string(),
            r.upper_tail.to_string(),
            format!("{:?}", r.range_flag).to_lowercase(),
            opt(r.cartesian_distance_mm),
            opt(r.radial_distance_mm),
        ]
    });
    table(w, stamp, &header, rows)
}

pub fn write_scatter<W: Write>(rows: &[ScatterRow], stamp: &Stamp, w: W) -> Result<()> {
    let header = ["pair_id", "cartesian_distance_mm", "radial_distance_mm", "p_value", "q_value"];
    let rows = rows.iter().map(|r| {
        vec![
            r.pair_id.clone(),
            r.cartesian_distance_mm.to_string(),
            r.radial_distance_mm.to_string(),
            r.p_value.to_string(),
            r.q_value.to_string(),
        ]
    });
    table(w, stamp, &header, rows)
}

/// One `largest_um` column, e.g. brute-force maxima or part observations.
pub fn write_values<W: Write>(values: &[f64], stamp: &Stamp, w: W) -> Result<()> {
    table(w, stamp, &["largest_um"], values.iter().map(|v| vec![v.to_string()]))
}

pub fn write_mode_ks<W: Write>(rows: &[ModeKsRow], stamp: &Stamp, w: W) -> Result<()> {
    let header = ["volume_mm3", "none_vs_poisson_only", "none_vs_all", "poisson_only_vs_all"];
    let rows = rows.iter().map(|r| {
        [r.volume_mm3, r.none_vs_poisson_only, r.none_vs_all, r.poisson_only_vs_all]
            .iter()
            .map(f64::to_string)
            .collect()
    });
    table(w, stamp, &header, rows)
}

/// Full histogram with its provenance, enough to rebuild the distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub format: String,
    pub toolkit_version: String,
    pub fit_id: String,
    pub volume_mm3: f64,
    pub config_hash: String,
    pub mean_um: f64,
    pub no_pore: u64,
    pub underflow: u64,
    pub overflow: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub edges_um: Vec<f64>,
    pub counts: Vec<u64>,
    pub config: McConfig,
}

impl DistributionFile {
    pub fn new(dist: &LargestPoreDistribution) -> Self {
        let p = &dist.provenance;
        Self {
            format: DISTRIBUTION_FORMAT.into(),
            toolkit_version: VERSION.into(),
            fit_id: p.fit_id.clone(),
            volume_mm3: p.volume_mm3,
            config_hash: config_hash(&p.fit_id, p.volume_mm3, &p.config),
            mean_um: dist.mean(),
            no_pore: dist.no_pore_count(),
            underflow: dist.underflow_count(),
            overflow: dist.overflow_count(),
            warnings: dist.warnings.clone(),
            edges_um: dist.edges().to_vec(),
            counts: dist.counts().to_vec(),
            config: McConfig { workers: 0, ..p.config.clone() },
        }
    }

    pub fn to_distribution(&self) -> Result<LargestPoreDistribution> {
        if self.format != DISTRIBUTION_FORMAT {
            return Err(Error::Format(format!(
                "expected distribution format `{DISTRIBUTION_FORMAT}`, found `{}`",
                self.format
            )));
        }
        let provenance = Provenance { fit_id: self.fit_id.clone(), volume_mm3: self.volume_mm3, config: self.config.clone() };
        let mut d = LargestPoreDistribution::from_parts(
            self.edges_um.clone(),
            self.counts.clone(),
            self.no_pore,
            self.underflow,
            self.overflow,
            self.mean_um,
            provenance,
        )?;
        d.warnings = self.warnings.clone();
        Ok(d)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("distribution file: {e}")))
    }
}
