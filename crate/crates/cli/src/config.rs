//! Run configuration file: TOML with `[specimen]`, `[inputs]`, `[threshold]`,
//! `[monte_carlo]`, `[plate]` and `[output]` sections. Every key is optional;
//! command-line flags take precedence over the file.

use std::path::{Path, PathBuf};

use poretail::equivalence::PlateExtents;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub specimen: SpecimenSection,
    #[serde(default)]
    pub inputs: InputsSection,
    #[serde(default)]
    pub threshold: ThresholdSection,
    #[serde(default)]
    pub monte_carlo: McSection,
    pub plate: Option<PlateExtents>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecimenSection {
    pub pore_table: Option<PathBuf>,
    pub specimen_id: Option<String>,
    pub geometry_label: Option<String>,
    pub scan_velocity_mm_s: Option<f64>,
    pub scanned_volume_mm3: Option<f64>,
    pub build_x_mm: Option<f64>,
    pub build_y_mm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsSection {
    pub fit: Option<PathBuf>,
    pub distribution: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    /// Fixed threshold in µm; automatic selection when absent.
    pub manual_um: Option<f64>,
    pub candidates_um: Option<Vec<f64>>,
    pub estimator: Option<String>,
    pub min_tail: Option<usize>,
    pub tolerance: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub seed: Option<u64>,
    pub uncertainty_mode: Option<String>,
    /// Shorthand for all three axis sizes.
    pub samples: Option<usize>,
    pub n_count_samples: Option<usize>,
    pub n_param_samples: Option<usize>,
    pub n_p_samples: Option<usize>,
    pub histogram_bins: Option<usize>,
    pub workers: Option<usize>,
    pub volumes_mm3: Option<Vec<f64>>,
    pub volume_mm3: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses `path` and resolves relative input paths against its directory.
    /// Missing input files are reported here rather than mid-run.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.specimen.pore_table,
            &mut cfg.inputs.fit,
            &mut cfg.inputs.distribution,
            &mut cfg.inputs.observations,
            &mut cfg.inputs.truth,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Usage(format!("{}: input `{}` does not exist", path.display(), p.display())));
            }
        }
        if let Some(dir) = cfg.output.dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_relative_inputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pores.csv"), "x").unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(
            &cfg_path,
            "[specimen]\npore_table = \"pores.csv\"\nscanned_volume_mm3 = 12.5\n[monte_carlo]\nseed = 4\n[output]\ndir = \"out\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.specimen.pore_table.unwrap(), dir.path().join("pores.csv"));
        assert_eq!(cfg.specimen.scanned_volume_mm3, Some(12.5));
        assert_eq!(cfg.monte_carlo.seed, Some(4));
        assert_eq!(cfg.output.dir.unwrap(), dir.path().join("out"));
    }

    #[test]
    fn missing_input_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, "[inputs]\nfit = \"nope.toml\"\n").unwrap();
        let err = RunConfig::load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("nope.toml"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, "[monte_carlo]\nsed = 4\n").unwrap();
        assert!(RunConfig::load(&cfg_path).is_err());
    }
}
