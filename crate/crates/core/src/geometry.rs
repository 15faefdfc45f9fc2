//! Pore geometry metrics and pore-table ingestion.
//!
//! Lengths are in µm and pore volumes in µm³. Specimen volumes are in mm³;
//! [`UM3_PER_MM3`] converts between the two.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UM3_PER_MM3: f64 = 1e9;

/// Sphericity above `1 + SPHERICITY_SLACK` is reported as a data-quality flag.
pub const SPHERICITY_SLACK: f64 = 1e-9;

pub const COL_ID: &str = "pore_id";
pub const COL_VOLUME: &str = "volume_um3";
pub const COL_AREA: &str = "surface_area_um2";
pub const COL_MIN_FERET: &str = "min_feret_um";
pub const COL_MAX_FERET: &str = "max_feret_um";
pub const COL_CX: &str = "centroid_x_um";
pub const COL_CY: &str = "centroid_y_um";
pub const COL_CZ: &str = "centroid_z_um";

/// Diameter of the sphere with the same volume: `(6V/π)^(1/3)`.
pub fn equiv_diameter(volume_um3: f64) -> Result<f64> {
    if !(volume_um3 > 0.0) || !volume_um3.is_finite() {
        return Err(Error::domain(format!("pore volume must be positive, got {volume_um3}")));
    }
    Ok((6.0 * volume_um3 / PI).cbrt())
}

/// Ratio of minimum to maximum Feret diameter.
pub fn aspect_ratio(min_feret_um: f64, max_feret_um: f64) -> Result<f64> {
    if !(min_feret_um > 0.0) || !(max_feret_um > 0.0) {
        return Err(Error::domain(format!(
            "Feret diameters must be positive, got {min_feret_um} and {max_feret_um}"
        )));
    }
    if min_feret_um > max_feret_um {
        return Err(Error::domain(format!(
            "minimum Feret diameter {min_feret_um} exceeds maximum {max_feret_um}"
        )));
    }
    Ok(min_feret_um / max_feret_um)
}

/// Surface area of the volume-equivalent sphere divided by the measured area.
pub fn sphericity(volume_um3: f64, surface_area_um2: f64) -> Result<f64> {
    if !(volume_um3 > 0.0) || !(surface_area_um2 > 0.0) {
        return Err(Error::domain(format!(
            "volume and surface area must be positive, got {volume_um3} and {surface_area_um2}"
        )));
    }
    Ok(PI.cbrt() * (6.0 * volume_um3).powf(2.0 / 3.0) / surface_area_um2)
}

/// One segmented pore with its derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoreRecord {
    pub pore_id: String,
    pub volume_um3: f64,
    pub surface_area_um2: f64,
    pub min_feret_um: f64,
    pub max_feret_um: f64,
    pub centroid_um: Option<[f64; 3]>,
    pub equiv_diameter_um: f64,
    pub aspect_ratio: f64,
    pub sphericity: f64,
}

impl PoreRecord {
    pub fn new(
        pore_id: impl Into<String>,
        volume_um3: f64,
        surface_area_um2: f64,
        min_feret_um: f64,
        max_feret_um: f64,
        centroid_um: Option<[f64; 3]>,
    ) -> Result<Self> {
        Ok(Self {
            pore_id: pore_id.into(),
            equiv_diameter_um: equiv_diameter(volume_um3)?,
            aspect_ratio: aspect_ratio(min_feret_um, max_feret_um)?,
            sphericity: sphericity(volume_um3, surface_area_um2)?,
            volume_um3,
            surface_area_um2,
            min_feret_um,
            max_feret_um,
            centroid_um,
        })
    }

    /// Sphericity above one means the surface area underestimates even a
    /// sphere's; kept, but worth a warning.
    pub fn sphericity_flagged(&self) -> bool {
        self.sphericity > 1.0 + SPHERICITY_SLACK
    }
}

/// Specimen-level metadata supplied next to the pore table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenMeta {
    pub specimen_id: String,
    #[serde(default)]
    pub geometry_label: String,
    #[serde(default)]
    pub scan_velocity_mm_s: Option<f64>,
    pub scanned_volume_mm3: f64,
    #[serde(default)]
    pub build_x_mm: Option<f64>,
    #[serde(default)]
    pub build_y_mm: Option<f64>,
}

impl SpecimenMeta {
    pub fn new(specimen_id: impl Into<String>, scanned_volume_mm3: f64) -> Self {
        Self {
            specimen_id: specimen_id.into(),
            geometry_label: String::new(),
            scan_velocity_mm_s: None,
            scanned_volume_mm3,
            build_x_mm: None,
            build_y_mm: None,
        }
    }

    pub fn build_location(&self) -> Option<(f64, f64)> {
        Some((self.build_x_mm?, self.build_y_mm?))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scanned_volume_mm3 > 0.0) || !self.scanned_volume_mm3.is_finite() {
            return Err(Error::domain(format!(
                "scanned volume must be positive, got {} mm3",
                self.scanned_volume_mm3
            )));
        }
        Ok(())
    }
}

/// A specimen's pore population. Pores are kept sorted by equivalent diameter,
/// largest first, so tail work reads a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenDataset {
    meta: SpecimenMeta,
    pores: Vec<PoreRecord>,
}

impl SpecimenDataset {
    pub fn new(meta: SpecimenMeta, mut pores: Vec<PoreRecord>) -> Result<Self> {
        meta.validate()?;
        // Stable sort keeps input order among equal diameters.
        pores.sort_by(|a, b| b.equiv_diameter_um.total_cmp(&a.equiv_diameter_um));
        Ok(Self { meta, pores })
    }

    pub fn meta(&self) -> &SpecimenMeta {
        &self.meta
    }

    pub fn pores(&self) -> &[PoreRecord] {
        &self.pores
    }

    pub fn len(&self) -> usize {
        self.pores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pores.is_empty()
    }

    pub fn scanned_volume_mm3(&self) -> f64 {
        self.meta.scanned_volume_mm3
    }

    /// Equivalent diameters, descending.
    pub fn diameters(&self) -> Vec<f64> {
        self.pores.iter().map(|p| p.equiv_diameter_um).collect()
    }

    /// Diameters strictly above `threshold`, descending.
    pub fn exceedances(&self, threshold: f64) -> Vec<f64> {
        self.pores
            .iter()
            .map(|p| p.equiv_diameter_um)
            .take_while(|&d| d > threshold)
            .collect()
    }

    /// Diameters at or below `threshold`, ascending.
    pub fn below(&self, threshold: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .pores
            .iter()
            .map(|p| p.equiv_diameter_um)
            .filter(|&d| d <= threshold)
            .collect();
        v.reverse();
        v
    }

    pub fn flagged_sphericity(&self) -> impl Iterator<Item = &PoreRecord> {
        self.pores.iter().filter(|p| p.sphericity_flagged())
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn required_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column_index(headers, name).ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| Error::Ingest {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{raw}` as a number"),
    })
}

fn positive_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let v = parse_cell(record, idx, row, column)?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Ingest {
            row,
            column: column.to_string(),
            message: format!("measurement must be positive, got {v}"),
        });
    }
    Ok(v)
}

/// Reads a comma-separated pore table with a header row.
///
/// Required columns are `pore_id`, `volume_um3`, `surface_area_um2`,
/// `min_feret_um` and `max_feret_um`; the three `centroid_*_um` columns are
/// read when all are present. Extra columns are ignored, so a dataset dump can
/// be read back. Row numbers in errors count data rows from 1.
pub fn ingest_specimen<R: Read>(reader: R, meta: SpecimenMeta) -> Result<SpecimenDataset> {
    meta.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = required_column(&headers, COL_ID)?;
    let vol_col = required_column(&headers, COL_VOLUME)?;
    let area_col = required_column(&headers, COL_AREA)?;
    let min_col = required_column(&headers, COL_MIN_FERET)?;
    let max_col = required_column(&headers, COL_MAX_FERET)?;
    let centroid_cols = match (
        column_index(&headers, COL_CX),
        column_index(&headers, COL_CY),
        column_index(&headers, COL_CZ),
    ) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };

    let mut pores = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let pore_id = record.get(id_col).unwrap_or("").trim().to_string();
        let volume = positive_cell(&record, vol_col, row, COL_VOLUME)?;
        let area = positive_cell(&record, area_col, row, COL_AREA)?;
        let a = positive_cell(&record, min_col, row, COL_MIN_FERET)?;
        let b = positive_cell(&record, max_col, row, COL_MAX_FERET)?;
        if a > b {
            return Err(Error::Ingest {
                row,
                column: COL_MIN_FERET.to_string(),
                message: format!("minimum Feret diameter {a} exceeds maximum {b}"),
            });
        }
        let centroid = match centroid_cols {
            Some([x, y, z]) => {
                let names = [COL_CX, COL_CY, COL_CZ];
                let mut c = [0.0; 3];
                for (k, idx) in [x, y, z].into_iter().enumerate() {
                    c[k] = parse_cell(&record, idx, row, names[k])?;
                }
                Some(c)
            }
            None => None,
        };
        pores.push(PoreRecord::new(pore_id, volume, area, a, b, centroid)?);
    }
    SpecimenDataset::new(meta, pores)
}

pub fn ingest_specimen_path(path: &std::path::Path, meta: SpecimenMeta) -> Result<SpecimenDataset> {
    let file = std::fs::File::open(path)?;
    ingest_specimen(std::io::BufReader::new(file), meta)
}

/// Writes the canonical dump: raw columns, optional centroid columns, then the
/// derived `equiv_diameter_um`, `aspect_ratio` and `sphericity` columns.
///
/// Floats are written in shortest round-trip form, so reading the dump back
/// reproduces every raw measurement bit for bit.
pub fn write_dataset<W: Write>(dataset: &SpecimenDataset, writer: W) -> Result<()> {
    let with_centroid = dataset.pores.iter().any(|p| p.centroid_um.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![COL_ID, COL_VOLUME, COL_AREA, COL_MIN_FERET, COL_MAX_FERET];
    if with_centroid {
        header.extend([COL_CX, COL_CY, COL_CZ]);
    }
    header.extend(["equiv_diameter_um", "aspect_ratio", "sphericity"]);
    wtr.write_record(&header)?;
    for p in &dataset.pores {
        let mut row = vec![
            p.pore_id.clone(),
            p.volume_um3.to_string(),
            p.surface_area_um2.to_string(),
            p.min_feret_um.to_string(),
            p.max_feret_um.to_string(),
        ];
        if with_centroid {
            match p.centroid_um {
                Some(c) => row.extend(c.iter().map(ToString::to_string)),
                None => row.extend(["NaN".to_string(), "NaN".to_string(), "NaN".to_string()]),
            }
        }
        row.push(p.equiv_diameter_um.to_string());
        row.push(p.aspect_ratio.to_string());
        row.push(p.sphericity.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
