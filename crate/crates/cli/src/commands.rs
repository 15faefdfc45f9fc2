use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use poretail::equivalence::{compare as compare_one, location_scatter, EquivalenceReport, PlateExtents, PlatePosition, RangeFlag};
use poretail::geometry::{ingest_specimen, write_dataset};
use poretail::io::{
    write_cdf_table, write_qq_table, write_reports, write_scan_table, write_scatter, write_summary, write_sweep_table,
    write_values, DistributionFile, FitReport, Stamp,
};
use poretail::largest::{sample_largest, volume_sweep};
use poretail::synthetic::{brute_force_largest, generate_specimen, GroundTruth};
use poretail::tail::{fit_tail, qq_points, EstimatorPolicy, TailFit};
use poretail::threshold::{
    default_candidates, select_threshold, stability_scan, ScanOptions, Selection, SelectionMode, ThresholdChoice,
};
use poretail::{LargestPoreDistribution, McConfig, SpecimenDataset, SpecimenMeta, VolumeOfInterest};

use crate::config::{McSection, RunConfig, SpecimenSection};
use crate::error::CliError;
use crate::{CompareArgs, FitArgs, GeomArgs, McArgs, PredictArgs, SimulateArgs, SpecimenArgs, SweepArgs};

fn required<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::file(path, e))
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> poretail::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
    Ok(dir)
}

fn save(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::file(&path, e))?;
    Ok(path)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn specimen_meta(args: &SpecimenArgs, sec: &SpecimenSection, table: &Path, volume: Option<f64>) -> SpecimenMeta {
    let id = args
        .specimen_id
        .clone()
        .or_else(|| sec.specimen_id.clone())
        .or_else(|| table.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "specimen".into());
    let mut meta = SpecimenMeta::new(id, volume.unwrap_or(f64::NAN));
    meta.geometry_label = args.geometry_label.clone().or_else(|| sec.geometry_label.clone()).unwrap_or_default();
    meta.scan_velocity_mm_s = sec.scan_velocity_mm_s;
    meta.build_x_mm = args.build_x.or(sec.build_x_mm);
    meta.build_y_mm = args.build_y.or(sec.build_y_mm);
    meta
}

fn load_dataset(path: &Path, meta: SpecimenMeta) -> Result<SpecimenDataset, CliError> {
    let text = read(path)?;
    let no_rows = || CliError::Data(format!("{}: no rows", path.display()));
    if text.lines().all(|l| l.trim().is_empty() || l.trim_start().starts_with('#')) {
        return Err(no_rows());
    }
    let ds = ingest_specimen(text.as_bytes(), meta).map_err(|e| CliError::in_file(path, e))?;
    if ds.is_empty() {
        return Err(no_rows());
    }
    Ok(ds)
}

fn load_fit(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<TailFit, CliError> {
    let path = required(flag.or_else(|| cfg.inputs.fit.clone()), "fit report (--fit or [inputs] fit)")?;
    let text = read(&path)?;
    FitReport::from_toml(&text)
        .and_then(|r| r.to_tail_fit())
        .map_err(|e| CliError::in_file(&path, e))
}

fn mc_config(args: &McArgs, sec: &McSection) -> Result<McConfig, CliError> {
    let seed = required(args.seed.or(sec.seed), "seed (--seed or [monte_carlo] seed); stochastic commands need one")?;
    let mut c = McConfig { seed, ..McConfig::default() };
    let mut axes = |all: Option<usize>, count: Option<usize>, param: Option<usize>, p: Option<usize>| {
        if let Some(n) = all {
            c.n_count_samples = n;
            c.n_param_samples = n;
            c.n_p_samples = n;
        }
        c.n_count_samples = count.unwrap_or(c.n_count_samples);
        c.n_param_samples = param.unwrap_or(c.n_param_samples);
        c.n_p_samples = p.unwrap_or(c.n_p_samples);
    };
    axes(sec.samples, sec.n_count_samples, sec.n_param_samples, sec.n_p_samples);
    axes(args.samples, args.count_samples, args.param_samples, args.p_samples);
    c.histogram_bins = args.bins.or(sec.histogram_bins).unwrap_or(c.histogram_bins);
    c.workers = args.workers.or(sec.workers).unwrap_or(0);
    c.uncertainty_mode = match (args.mode, &sec.uncertainty_mode) {
        (Some(m), _) => m,
        (None, Some(s)) => s.parse().map_err(|e: poretail::Error| CliError::Usage(e.to_string()))?,
        (None, None) => c.uncertainty_mode,
    };
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

pub fn geom(args: GeomArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let table = required(args.table.or_else(|| cfg.specimen.pore_table.clone()), "pore table")?;
    // The dump carries no specimen volume, so any positive placeholder will do.
    let volume = args.specimen.scanned_volume.or(cfg.specimen.scanned_volume_mm3).or(Some(1.0));
    let ds = load_dataset(&table, specimen_meta(&args.specimen, &cfg.specimen, &table, volume))?;
    let dump = render(|w| write_dataset(&ds, w))?;
    match args.out {
        Some(p) => fs::write(&p, &dump).map_err(|e| CliError::file(&p, e))?,
        None => std::io::stdout().write_all(&dump).map_err(|e| CliError::file(Path::new("<stdout>"), e))?,
    }
    let flagged = ds.flagged_sphericity().count();
    eprintln!("{}: {} pores, {} with sphericity above 1", ds.meta().specimen_id, ds.len(), flagged);
    Ok(())
}

pub fn fit(args: FitArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let sec = &cfg.threshold;
    let table = required(args.table.or_else(|| cfg.specimen.pore_table.clone()), "pore table")?;
    let volume = required(
        args.specimen.scanned_volume.or(cfg.specimen.scanned_volume_mm3),
        "scanned volume (--scanned-volume or [specimen] scanned_volume_mm3)",
    )?;
    let ds = load_dataset(&table, specimen_meta(&args.specimen, &cfg.specimen, &table, Some(volume)))?;

    let defaults = ScanOptions::default();
    let options = ScanOptions {
        min_tail: args.min_tail.or(sec.min_tail).unwrap_or(defaults.min_tail),
        tolerance: args.tolerance.or(sec.tolerance).unwrap_or(defaults.tolerance),
        window: args.window.or(sec.window).unwrap_or(defaults.window),
    };
    let policy: EstimatorPolicy = match args.estimator.as_ref().or(sec.estimator.as_ref()) {
        Some(s) => s.parse().map_err(|e: poretail::Error| CliError::Usage(e.to_string()))?,
        None => EstimatorPolicy::default(),
    };
    let candidates = if !args.candidates.is_empty() {
        args.candidates
    } else {
        sec.candidates_um.clone().unwrap_or_else(|| default_candidates(&ds.diameters()))
    };
    let choice = match args.threshold.or(sec.manual_um) {
        Some(v) => ThresholdChoice::Manual(v),
        None => ThresholdChoice::Auto,
    };

    let scan = match (stability_scan(&ds, &candidates, options), choice) {
        (Ok(scan), _) => Some(scan),
        // A manual threshold does not depend on the scan.
        (Err(e), ThresholdChoice::Manual(_)) => {
            eprintln!("warning: threshold scan unavailable: {e}");
            None
        }
        (Err(e), ThresholdChoice::Auto) => return Err(e.into()),
    };
    let selection = match (&scan, choice) {
        (Some(scan), c) => select_threshold(scan, c)?,
        (None, ThresholdChoice::Manual(v)) if v.is_finite() => Selection { threshold: v, mode: SelectionMode::Manual },
        (None, _) => return Err(CliError::Usage("manual threshold must be finite".into())),
    };
    let fit = fit_tail(&ds, selection.threshold, policy, options.min_tail)?;
    let specimen_id = &ds.meta().specimen_id;
    let report = FitReport::new(&fit, specimen_id, selection.mode);
    let stamp = Stamp::new()
        .with("fit_id", &fit.fit_id)
        .with("specimen_id", specimen_id)
        .with("threshold_um", selection.threshold)
        .with("threshold_mode", format!("{:?}", selection.mode).to_lowercase());

    let dir = out_dir(args.out_dir, cfg)?;
    save(&dir, "fit.toml", report.to_toml()?.as_bytes())?;
    if let Some(scan) = &scan {
        warn_all(&scan.warnings);
        save(&dir, "scan.csv", &render(|w| write_scan_table(scan, &stamp, w))?)?;
    }
    let qq = qq_points(&fit.params, &ds.exceedances(selection.threshold));
    save(&dir, "qq.csv", &render(|w| write_qq_table(&qq, &stamp, w))?)?;

    for flag in &fit.flags {
        eprintln!("warning: fit flag {flag:?}");
    }
    println!(
        "{}: threshold {} um ({}), {} sigma {:.4} um xi {:.4}, {} exceedances, {:.4} per mm3",
        fit.fit_id,
        selection.threshold,
        if selection.mode == SelectionMode::Auto { "auto" } else { "manual" },
        fit.estimator,
        fit.params.scale,
        fit.params.shape,
        fit.n_exceed,
        fit.lambda_above.rate
    );
    Ok(())
}

fn write_distribution(dist: &LargestPoreDistribution, dir: &Path) -> Result<(), CliError> {
    save(dir, "distribution.toml", DistributionFile::new(dist).to_toml()?.as_bytes())?;
    save(dir, "cdf.csv", &render(|w| write_cdf_table(dist, w))?)?;
    save(dir, "summary.csv", &render(|w| write_summary(dist, w))?)?;
    Ok(())
}

pub fn predict(args: PredictArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let fit = load_fit(args.fit, cfg)?;
    let (volume, config) = match args.replay {
        Some(path) => {
            let file = DistributionFile::from_toml(&read(&path)?).map_err(|e| CliError::in_file(&path, e))?;
            if file.fit_id != fit.fit_id {
                return Err(CliError::Data(format!(
                    "{}: recorded for fit `{}`, not `{}`",
                    path.display(),
                    file.fit_id,
                    fit.fit_id
                )));
            }
            let workers = args.mc.workers.or(cfg.monte_carlo.workers).unwrap_or(0);
            (file.volume_mm3, McConfig { workers, ..file.config })
        }
        None => (
            required(args.volume.or(cfg.monte_carlo.volume_mm3), "volume of interest (--volume)")?,
            mc_config(&args.mc, &cfg.monte_carlo)?,
        ),
    };
    let dist = sample_largest(&fit, VolumeOfInterest::new(volume)?, &config)?;
    warn_all(&dist.warnings);
    write_distribution(&dist, &out_dir(args.out_dir, cfg)?)?;
    let s = dist.summary();
    println!(
        "{} in {} mm3 ({}): mean {:.3} um, 95% band {:.3}..{:.3} um, median {:.3} um",
        fit.fit_id, volume, config.uncertainty_mode, s.mean_um, s.p2_5_um, s.p97_5_um, s.p50_um
    );
    Ok(())
}

fn numbers(v: Option<Vec<f64>>, n: usize, flag: &str) -> Result<Option<Vec<f64>>, CliError> {
    match v {
        Some(v) if v.len() != n => Err(CliError::Usage(format!("--{flag} takes {n} comma-separated numbers"))),
        v => Ok(v),
    }
}

fn position(v: Option<Vec<f64>>, flag: &str) -> Result<Option<PlatePosition>, CliError> {
    Ok(numbers(v, 2, flag)?.map(|v| PlatePosition { x_mm: v[0], y_mm: v[1] }))
}

struct Observation {
    part_id: String,
    largest_um: f64,
    position: Option<PlatePosition>,
}

fn read_observations(path: &Path) -> Result<Vec<Observation>, CliError> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let value_col = col("largest_um").ok_or_else(|| bad("missing column `largest_um`".into()))?;
    let (id_col, x_col, y_col) = (col("part_id"), col("x_mm"), col("y_mm"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| -> Result<Option<f64>, CliError> {
            match rec.get(c).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(format!("row {}: cannot parse `{s}`", i + 1))),
            }
        };
        let largest_um = num(value_col)?.ok_or_else(|| bad(format!("row {}: empty `largest_um`", i + 1)))?;
        let position = match (x_col, y_col) {
            (Some(x), Some(y)) => match (num(x)?, num(y)?) {
                (Some(x_mm), Some(y_mm)) => Some(PlatePosition { x_mm, y_mm }),
                _ => None,
            },
            _ => None,
        };
        let part_id = id_col
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("obs{}", i + 1));
        out.push(Observation { part_id, largest_um, position });
    }
    if out.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(out)
}

pub fn compare(args: CompareArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let path = required(
        args.distribution.or_else(|| cfg.inputs.distribution.clone()),
        "distribution file (--distribution or [inputs] distribution)",
    )?;
    let dist = DistributionFile::from_toml(&read(&path)?)
        .and_then(|f| f.to_distribution())
        .map_err(|e| CliError::in_file(&path, e))?;

    let part_pos = position(args.part_pos, "part-pos")?;
    let observations = match (args.observed, args.observations.or_else(|| cfg.inputs.observations.clone())) {
        (Some(v), _) => vec![Observation { part_id: args.part_id, largest_um: v, position: part_pos }],
        (None, Some(p)) => read_observations(&p)?,
        (None, None) => return Err(CliError::Usage("missing observation (--observed or --observations)".into())),
    };
    let coupon = position(args.coupon_pos, "coupon-pos")?.or_else(|| {
        let s = &cfg.specimen;
        Some(PlatePosition { x_mm: s.build_x_mm?, y_mm: s.build_y_mm? })
    });
    let plate = numbers(args.plate, 4, "plate")?
        .map(|p| PlateExtents { x_min_mm: p[0], x_max_mm: p[1], y_min_mm: p[2], y_max_mm: p[3] })
        .or(cfg.plate);

    let reports = observations
        .iter()
        .map(|o| compare_one(&dist, o.part_id.clone(), o.largest_um, coupon, o.position, plate))
        .collect::<poretail::Result<Vec<EquivalenceReport>>>()?;
    let missing = reports.iter().filter(|r| r.cartesian_distance_mm.is_none()).count();
    if missing > 0 {
        eprintln!("warning: {missing} comparison(s) without plate distances: coupon position, part position or plate extents missing");
    }

    let stamp = Stamp::for_distribution(&dist);
    let dir = out_dir(args.out_dir, cfg)?;
    save(&dir, "comparison.csv", &render(|w| write_reports(&reports, &stamp, w))?)?;
    if let Some(plate) = plate {
        let (rows, warnings) = location_scatter(&reports, plate);
        warn_all(&warnings);
        save(&dir, "scatter.csv", &render(|w| write_scatter(&rows, &stamp, w))?)?;
    }
    const SHOWN: usize = 20;
    for r in reports.iter().take(SHOWN) {
        let flag = format!("{:?}", r.range_flag).to_lowercase();
        println!("{}: {:.3} um  q={:.4} p={:.4} ({flag})", r.part_specimen_id, r.observed_largest_um, r.q_value, r.p_value);
    }
    if reports.len() > SHOWN {
        let outside = reports.iter().filter(|r| r.range_flag != RangeFlag::Inside).count();
        println!("... {} more; {outside} of {} outside the predicted range", reports.len() - SHOWN, reports.len());
    }
    Ok(())
}

pub fn sweep(args: SweepArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let fit = load_fit(args.fit, cfg)?;
    let volumes = if !args.volumes.is_empty() {
        args.volumes
    } else {
        required(cfg.monte_carlo.volumes_mm3.clone(), "volume list (--volumes or [monte_carlo] volumes_mm3)")?
    };
    let config = mc_config(&args.mc, &cfg.monte_carlo)?;
    let rows = volume_sweep(&fit, &volumes, &config)?;
    let stamp = Stamp::for_sweep(&fit.fit_id, &volumes, &config);
    save(&out_dir(args.out_dir, cfg)?, "sweep.csv", &render(|w| write_sweep_table(&rows, &stamp, w))?)?;
    for r in &rows {
        let s = &r.summary;
        println!("{} mm3: mean {:.3} um, 95% band {:.3}..{:.3} um", r.volume_mm3, s.mean_um, s.p2_5_um, s.p97_5_um);
    }
    Ok(())
}

/// Written next to a simulated pore table so `fit --config` can read it.
#[derive(serde::Serialize)]
struct SpecimenFile<'a> {
    specimen: SpecimenEntry<'a>,
}

#[derive(serde::Serialize)]
struct SpecimenEntry<'a> {
    pore_table: &'a str,
    specimen_id: &'a str,
    scanned_volume_mm3: f64,
}

pub fn simulate(args: SimulateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let path = required(args.truth.or_else(|| cfg.inputs.truth.clone()), "ground truth (--truth or [inputs] truth)")?;
    let seed = required(args.seed.or(cfg.monte_carlo.seed), "seed (--seed or [monte_carlo] seed); stochastic commands need one")?;
    let truth: GroundTruth =
        toml::from_str(&read(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let ds = generate_specimen(&truth, &args.specimen_id, seed).map_err(|e| CliError::in_file(&path, e))?;

    let stamp = Stamp::new().with("seed", seed).with("truth", path.display());
    let dir = out_dir(args.out_dir, cfg)?;
    let table = render(|w| {
        stamp.write(w)?;
        write_dataset(&ds, w)
    })?;
    save(&dir, "pores.csv", &table)?;
    let specimen = SpecimenFile {
        specimen: SpecimenEntry {
            pore_table: "pores.csv",
            specimen_id: &args.specimen_id,
            scanned_volume_mm3: truth.volume_mm3,
        },
    };
    let text = toml::to_string(&specimen).map_err(|e| CliError::Data(e.to_string()))?;
    save(&dir, "specimen.toml", text.as_bytes())?;
    println!("{}: {} pores in {} mm3", args.specimen_id, ds.len(), truth.volume_mm3);

    if let Some(v) = args.largest_volume {
        let maxima = brute_force_largest(&truth, VolumeOfInterest::new(v)?, args.replications, seed, None)?;
        let stamp = stamp.with("volume_mm3", v).with("replications", args.replications);
        save(&dir, "maxima.csv", &render(|w| write_values(maxima.values(), &stamp, w))?)?;
        println!("{} brute-force maxima in {} mm3", args.replications, v);
    }
    Ok(())
}
