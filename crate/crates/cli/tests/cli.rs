use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poretail::equivalence::{ks_statistic, ClosedFormLargest};
use poretail::io::{read_stamp, DistributionFile, FitReport};
use poretail::largest::RateEstimate;
use poretail::tail::{mle_covariance, Estimator, GpdParams, TailFit};
use poretail::threshold::SelectionMode;
use tempfile::TempDir;

fn poretail(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poretail")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TRUTH: &str = "lambda_above = 2.0
lambda_below = 10.0
volume_mm3 = 100.0

[bulk]
median_um = 8.0
log_sd = 0.5

[tail]
threshold = 20.0
scale = 5.0
shape = 0.1
";

/// Simulated specimen in `dir/sim` with its `specimen.toml`.
fn simulated(dir: &Path) -> PathBuf {
    fs::write(dir.join("truth.toml"), TRUTH).unwrap();
    ok(&poretail(dir, &["simulate", "--truth", "truth.toml", "--seed", "5", "--specimen-id", "C1", "--out-dir", "sim"]));
    dir.join("sim")
}

fn manual_fit(dir: &Path) -> PathBuf {
    simulated(dir);
    ok(&poretail(dir, &["fit", "--config", "sim/specimen.toml", "--threshold", "20", "--out-dir", "fit"]));
    dir.join("fit/fit.toml")
}

/// A fit report written directly, bypassing estimation.
fn injected_fit(dir: &Path, params: GpdParams, n_exceed: usize, scanned: f64) -> PathBuf {
    let fit = TailFit {
        fit_id: "injected".into(),
        params,
        covariance: Some(mle_covariance(params.scale, params.shape, n_exceed)),
        estimator: Estimator::Mle,
        n_exceed,
        flags: vec![],
        lambda_above: RateEstimate::from_count(n_exceed, scanned),
        lambda_below: RateEstimate::from_count(0, scanned),
        empirical_below: vec![],
        scanned_volume_mm3: scanned,
    };
    let path = dir.join("injected.toml");
    fs::write(&path, FitReport::new(&fit, "S", SelectionMode::Manual).to_toml().unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    csv_rows(path).iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn geom_dumps_derived_columns() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("pores.csv"),
        "pore_id,volume_um3,surface_area_um2,min_feret_um,max_feret_um\na,523.5987755982989,314.1592653589793,10,10\nb,100,150,4,8\n",
    )
    .unwrap();
    let out = ok(&poretail(dir.path(), &["geom", "pores.csv"]));
    let mut lines = out.lines();
    assert!(lines.next().unwrap().ends_with("equiv_diameter_um,aspect_ratio,sphericity"));
    let a: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(a[0], "a");
    assert!((a[5].parse::<f64>().unwrap() - 10.0).abs() < 1e-12);
    let b: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(b[6], "0.5");
}

#[test]
fn geom_names_missing_column() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("pores.csv"), "pore_id,volume_um3,min_feret_um,max_feret_um\na,1,1,1\n").unwrap();
    let out = poretail(dir.path(), &["geom", "pores.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("surface_area_um2"));
}

#[test]
fn geom_rejects_empty_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = poretail(dir.path(), &["geom", "empty.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no rows"));

    fs::write(dir.path().join("header.csv"), "pore_id,volume_um3,surface_area_um2,min_feret_um,max_feret_um\n").unwrap();
    let out = poretail(dir.path(), &["geom", "header.csv"]);
    assert!(stderr(&out).contains("no rows"));
}

#[test]
fn fit_report_recovers_synthetic_tail() {
    let dir = TempDir::new().unwrap();
    let path = manual_fit(dir.path());
    let report = FitReport::from_toml(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report.threshold_um, 20.0);
    assert_eq!(report.threshold_mode, SelectionMode::Manual);
    assert!(report.covariance_available);
    let fit = report.to_tail_fit().unwrap();
    let cov = fit.covariance.unwrap();
    assert!((fit.params.scale - 5.0).abs() < 3.0 * cov[0][0].sqrt(), "sigma {}", fit.params.scale);
    assert!((fit.params.shape - 0.1).abs() < 3.0 * cov[1][1].sqrt(), "xi {}", fit.params.shape);
    assert!((fit.lambda_above.rate - 2.0).abs() < 3.0 * fit.lambda_above.se());
    assert!(dir.path().join("fit/scan.csv").exists());
    let qq = csv_rows(&dir.path().join("fit/qq.csv"));
    assert_eq!(qq.len(), report.n_exceed);
}

#[test]
fn fit_auto_selects_a_scanned_threshold() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path());
    ok(&poretail(dir.path(), &["fit", "--config", "sim/specimen.toml", "--out-dir", "fit"]));
    let report = FitReport::from_toml(&fs::read_to_string(dir.path().join("fit/fit.toml")).unwrap()).unwrap();
    assert_eq!(report.threshold_mode, SelectionMode::Auto);
    let scan = dir.path().join("fit/scan.csv");
    let thresholds = column(&scan, "threshold");
    assert!(thresholds.contains(&report.threshold_um));
}

#[test]
fn fit_rejects_too_few_pores() {
    let dir = TempDir::new().unwrap();
    let mut table = String::from("pore_id,volume_um3,surface_area_um2,min_feret_um,max_feret_um\n");
    for i in 0..10 {
        let d = 10.0 + i as f64;
        let v = std::f64::consts::PI / 6.0 * d * d * d;
        table.push_str(&format!("{i},{v},{},{d},{d}\n", std::f64::consts::PI * d * d));
    }
    fs::write(dir.path().join("ten.csv"), table).unwrap();
    let out = poretail(dir.path(), &["fit", "ten.csv", "--scanned-volume", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = poretail(dir.path(), &["fit", "ten.csv", "--scanned-volume", "1", "--threshold", "12"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("too few exceedances"));
}

#[test]
fn predict_mode_none_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let params = GpdParams::new(20.0, 4.0, 0.2).unwrap();
    // 120 exceedances in 10 mm³, predicted for 5 mm³: N = 60.
    injected_fit(dir.path(), params, 120, 10.0);
    ok(&poretail(
        dir.path(),
        &[
            "predict", "--fit", "injected.toml", "--volume", "5", "--seed", "1", "--mode", "none",
            "--count-samples", "1", "--param-samples", "1", "--p-samples", "1000000",
        ],
    ));
    let dist = DistributionFile::from_toml(&fs::read_to_string(dir.path().join("distribution.toml")).unwrap())
        .unwrap()
        .to_distribution()
        .unwrap();
    let closed = ClosedFormLargest::new(params, 60.0, dist.edges()).unwrap();
    let ks = ks_statistic(&dist, &closed);
    assert!(ks < 0.01, "KS {ks}");
}

#[test]
fn predict_is_reproducible_from_its_stamp() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    let run = |out: &str, workers: &str| {
        ok(&poretail(
            dir.path(),
            &["predict", "--fit", "fit/fit.toml", "--volume", "30", "--seed", "8", "--samples", "120", "--workers", workers, "--out-dir", out],
        ))
    };
    run("a", "1");
    run("b", "3");
    for f in ["distribution.toml", "cdf.csv", "summary.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }

    let stamp = read_stamp(&fs::read_to_string(dir.path().join("a/cdf.csv")).unwrap());
    let get = |k: &str| stamp.entries.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap();
    assert_eq!(get("seed"), "8");
    assert_eq!(get("toolkit_version"), poretail::VERSION);
    assert_eq!(get("config_hash").len(), 16);
    ok(&poretail(
        dir.path(),
        &[
            "predict", "--fit", "fit/fit.toml", "--volume", &get("volume_mm3"), "--seed", &get("seed"),
            "--mode", &get("uncertainty_mode"), "--count-samples", &get("n_count_samples"),
            "--param-samples", &get("n_param_samples"), "--p-samples", &get("n_p_samples"),
            "--bins", &get("histogram_bins"), "--out-dir", "c",
        ],
    ));
    ok(&poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--replay", "a/distribution.toml", "--out-dir", "d"]));
    for f in ["distribution.toml", "cdf.csv", "summary.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.path().join("d").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn predict_rejects_bad_inputs() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    let out = poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "-3", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"));

    let path = dir.path().join("fit/fit.toml");
    let mut report = FitReport::from_toml(&fs::read_to_string(&path).unwrap()).unwrap();
    report.covariance_available = false;
    report.cov_sigma_sigma = None;
    report.cov_sigma_xi = None;
    report.cov_xi_xi = None;
    fs::write(dir.path().join("nocov.toml"), report.to_toml().unwrap()).unwrap();
    let out = poretail(dir.path(), &["predict", "--fit", "nocov.toml", "--volume", "10", "--seed", "1", "--samples", "20"]);
    assert_eq!(out.status.code(), Some(3));
    ok(&poretail(
        dir.path(),
        &["predict", "--fit", "nocov.toml", "--volume", "10", "--seed", "1", "--samples", "20", "--mode", "poisson_only"],
    ));
}

#[test]
fn compare_at_median_gives_half() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    ok(&poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "25", "--seed", "2", "--samples", "100"]));
    let median = column(&dir.path().join("summary.csv"), "p50_um")[0];
    let out = poretail(dir.path(), &["compare", "--distribution", "distribution.toml", "--observed", &median.to_string()]);
    ok(&out);
    assert!(stderr(&out).contains("without plate distances"));
    let rows = csv_rows(&dir.path().join("comparison.csv"));
    let q: f64 = rows[0][5].parse().unwrap();
    assert!((q - 0.5).abs() < 1e-9, "q {q}");
    assert_eq!(rows[0][8], "");
    assert_eq!(rows[0][9], "");
}

#[test]
fn compare_with_positions_fills_distances() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    ok(&poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "25", "--seed", "2", "--samples", "60"]));
    ok(&poretail(
        dir.path(),
        &[
            "compare", "--distribution", "distribution.toml", "--observed", "40", "--coupon-pos", "10,50",
            "--part-pos", "40,90", "--plate", "0,100,0,100",
        ],
    ));
    let cart = column(&dir.path().join("scatter.csv"), "cartesian_distance_mm")[0];
    let radial = column(&dir.path().join("scatter.csv"), "radial_distance_mm")[0];
    assert!((cart - 50.0).abs() < 1e-12);
    assert!((radial - (40f64.hypot(10.0) - 40.0)).abs() < 1e-12);
}

#[test]
fn self_sampled_observations_give_uniform_q() {
    let dir = TempDir::new().unwrap();
    let params = GpdParams::new(20.0, 5.0, 0.1).unwrap();
    // A huge scanned volume makes the rate and parameter uncertainty
    // negligible, so the prediction is the plain Poisson model.
    injected_fit(dir.path(), params, 2_000_000, 1_000_000.0);
    let truth = "lambda_above = 2.0\nlambda_below = 0.0\nvolume_mm3 = 1.0\n\n[bulk]\nmedian_um = 5.0\nlog_sd = 0.5\n\n[tail]\nthreshold = 20.0\nscale = 5.0\nshape = 0.1\n";
    fs::write(dir.path().join("truth.toml"), truth).unwrap();
    ok(&poretail(
        dir.path(),
        &["simulate", "--truth", "truth.toml", "--seed", "11", "--largest-volume", "25", "--replications", "500", "--out-dir", "sim"],
    ));
    ok(&poretail(
        dir.path(),
        &["predict", "--fit", "injected.toml", "--volume", "25", "--seed", "12", "--mode", "poisson_only", "--samples", "300"],
    ));
    ok(&poretail(dir.path(), &["compare", "--distribution", "distribution.toml", "--observations", "sim/maxima.csv"]));
    let mut q = column(&dir.path().join("comparison.csv"), "q_value");
    q.sort_by(f64::total_cmp);
    let n = q.len() as f64;
    let d = q
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    assert!(d < 1.6276 / n.sqrt(), "KS vs uniform {d}");
}

#[test]
fn sweep_rows_track_volume() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    let out = poretail(
        dir.path(),
        &["sweep", "--fit", "fit/fit.toml", "--volumes", "5,25,100,400", "--seed", "4", "--samples", "150", "--mode", "poisson_only"],
    );
    ok(&out);
    let p975 = column(&dir.path().join("sweep.csv"), "p97_5_um");
    assert!(p975.windows(2).all(|w| w[1] >= w[0]), "{p975:?}");

    ok(&poretail(dir.path(), &["sweep", "--fit", "fit/fit.toml", "--volumes", "25", "--seed", "4", "--samples", "80", "--out-dir", "one"]));
    ok(&poretail(dir.path(), &["predict", "--fit", "fit/fit.toml", "--volume", "25", "--seed", "4", "--samples", "80", "--out-dir", "one"]));
    assert_eq!(csv_rows(&dir.path().join("one/sweep.csv")), csv_rows(&dir.path().join("one/summary.csv")));

    let out = poretail(dir.path(), &["sweep", "--fit", "fit/fit.toml", "--seed", "4"]);
    assert_ne!(out.status.code(), Some(0));
    fs::write(dir.path().join("run.toml"), "[monte_carlo]\nvolumes_mm3 = []\nseed = 4\n").unwrap();
    let out = poretail(dir.path(), &["--config", "run.toml", "sweep", "--fit", "fit/fit.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_inputs_and_flags_override() {
    let dir = TempDir::new().unwrap();
    manual_fit(dir.path());
    fs::write(
        dir.path().join("run.toml"),
        "[inputs]\nfit = \"fit/fit.toml\"\n\n[monte_carlo]\nseed = 3\nsamples = 50\nvolume_mm3 = 20.0\n\n[output]\ndir = \"cfg\"\n",
    )
    .unwrap();
    ok(&poretail(dir.path(), &["--config", "run.toml", "predict"]));
    ok(&poretail(dir.path(), &["--config", "run.toml", "predict", "--seed", "4", "--out-dir", "flag"]));
    let seed = |d: &str| {
        let stamp = read_stamp(&fs::read_to_string(dir.path().join(d).join("cdf.csv")).unwrap());
        stamp.entries.into_iter().find(|(k, _)| k == "seed").unwrap().1
    };
    assert_eq!(seed("cfg"), "3");
    assert_eq!(seed("flag"), "4");
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(poretail(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(poretail(dir.path(), &["predict", "--volume", "abc"]).status.code(), Some(1));
    assert_eq!(poretail(dir.path(), &["simulate", "--truth", "missing.toml"]).status.code(), Some(1));
    assert_eq!(poretail(dir.path(), &["--help"]).status.code(), Some(0));
}
