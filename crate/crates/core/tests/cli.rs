use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rocsurf::data::{dataset_to_csv, CutPair, Dataset, Unit};
use rocsurf::estimator::EstimatorSpec;
use rocsurf::parametric::Formula;
use rocsurf::simulation::{generate_scenario_i, generate_scenario_ii, ScenarioIConfig, ScenarioIIConfig};
use serde_json::Value;

fn rocsurf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocsurf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid json")
}

fn write_csv(dir: &Path, name: &str, ds: &Dataset) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, dataset_to_csv(ds)).unwrap();
    path
}

fn scenario_i_file(dir: &Path) -> PathBuf {
    let ds = generate_scenario_i(&ScenarioIConfig::new(1, 250, 11).unwrap()).unwrap();
    write_csv(dir, "s1.csv", &ds)
}

#[test]
fn estimate_knn_is_in_range_symmetric_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = scenario_i_file(dir.path());
    let args = ["estimate", "--input", input.to_str().unwrap(), "--cut", "2,4", "--estimator", "knn", "--k", "1"];
    let first = rocsurf(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let v = json(&first.stdout);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["variance"], "asymptotic");
    for k in 0..3 {
        let x = v["tcf"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x));
        for j in 0..3 {
            assert_eq!(v["covariance"][k][j], v["covariance"][j][k]);
        }
    }
    let second = rocsurf(&args);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn bootstrap_variance_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = scenario_i_file(dir.path());
    let run = |seed: &str| {
        rocsurf(&[
            "estimate", "--input", input.to_str().unwrap(), "--cut", "2,5", "--estimator", "fi",
            "--variance", "bootstrap", "--b", "30", "--seed", seed,
        ])
    };
    let a = run("5");
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run("5").stdout);
    assert_ne!(a.stdout, run("6").stdout);
    assert_eq!(json(&a.stdout)["variance"], "bootstrap");
}

#[test]
fn spe_out_of_range_still_succeeds() {
    // the misspecified working models push SPE past 1 in a fair share of samples
    let cut = CutPair::new(-1.0, -0.5).unwrap();
    let spec = EstimatorSpec::parametric(
        rocsurf::data::EstimatorTag::Spe,
        "t".parse::<Formula>().unwrap(),
        "t,a1^2/3".parse::<Formula>().unwrap(),
        false,
    )
    .unwrap();
    let ds = (0..200)
        .map(|seed| generate_scenario_ii(&ScenarioIIConfig::new(0.5, 400, seed).unwrap()).unwrap())
        .find(|ds| spec.estimate(ds, cut).map(|e| e.out_of_range).unwrap_or(false))
        .expect("some sample leaves the unit cube");
    let dir = tempfile::tempdir().unwrap();
    let input = write_csv(dir.path(), "s2.csv", &ds);
    let out = rocsurf(&[
        "estimate", "--input", input.to_str().unwrap(), "--cut=-1,-0.5", "--estimator", "spe",
        "--disease-formula", "t", "--verification-formula", "t,a1^2/3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out.stdout)["out_of_range"], true);
}

#[test]
fn surface_writes_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = scenario_i_file(dir.path());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let r = rocsurf(&[
            "surface", "--input", input.to_str().unwrap(), "--estimator", "knn", "--k", "3",
            "--grid", "quantile:5", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        assert_eq!(json(&r.stdout)["points"], 10);
    }
    let text = std::fs::read_to_string(&out_a).unwrap();
    assert_eq!(text.lines().next(), Some("c1,c2,tcf1,tcf2,tcf3"));
    assert_eq!(text.lines().count(), 11);
    assert_eq!(text, std::fs::read_to_string(&out_b).unwrap());

    let cuts = dir.path().join("cuts.csv");
    std::fs::write(&cuts, "c1,c2\n2,4\n4,7\n").unwrap();
    let out_c = dir.path().join("c.csv");
    let r = rocsurf(&[
        "surface", "--input", input.to_str().unwrap(), "--estimator", "fi",
        "--grid", &format!("file:{}", cuts.display()), "--out", out_c.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read_to_string(&out_c).unwrap().lines().count(), 3);
}

#[test]
fn simulate_reproduces_the_true_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t1.cfg");
    std::fs::write(&cfg, "scenario = i\nsigma_choice = 1\nn = 120\nreps = 3\nseed = 4\ncuts = 2,4\nestimators = fi, knn\nk = 1\n").unwrap();
    let out = dir.path().join("table.csv");
    let r = rocsurf(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l.starts_with("2,4,True,0.5000,0.4347,0.9347")), "{text}");
}

#[test]
fn select_k_and_ellipsoid_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = scenario_i_file(dir.path());
    let r = rocsurf(&["select-k", "--input", input.to_str().unwrap(), "--metric", "euclidean", "--k-max", "6"]);
    assert_eq!(r.status.code(), Some(0));
    let v = json(&r.stdout);
    assert_eq!(v["criterion"].as_array().unwrap().len(), 6);
    let k = v["k_star"].as_u64().unwrap();
    assert!((1..=6).contains(&k));

    let r = rocsurf(&[
        "ellipsoid", "--input", input.to_str().unwrap(), "--cut", "2,4", "--estimator", "knn", "--k", "1",
        "--level", "0.95",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let v = json(&r.stdout);
    assert!((v["radius2"].as_f64().unwrap() - 7.814_727_903_251_178).abs() < 1e-9);
    assert_eq!(v["cholesky"][0][1], 0.0);
}

#[test]
fn subsample_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let units = (0..300)
        .map(|i| Unit::new(f64::from(i % 17), vec![f64::from(i % 5)], Some((i % 3) as u8 + 1)))
        .collect();
    let full = write_csv(dir.path(), "full.csv", &Dataset::new(units).unwrap());
    let out = dir.path().join("sub.csv");
    let args = [
        "subsample", "--input", full.to_str().unwrap(), "--rule", "0.2 + 0.6*I(t>8)", "--seed", "3",
        "--out", out.to_str().unwrap(),
    ];
    assert_eq!(rocsurf(&args).status.code(), Some(0));
    let once = std::fs::read(&out).unwrap();
    assert_eq!(rocsurf(&args).status.code(), Some(0));
    assert_eq!(once, std::fs::read(&out).unwrap());

    let r = rocsurf(&["validate", "--input", out.to_str().unwrap(), "--cut", "4,12"]);
    assert_eq!(r.status.code(), Some(0));
    let rate = json(&r.stdout)["report"]["verification_rate"].as_f64().unwrap();
    assert!(rate > 0.2 && rate < 0.8, "{rate}");
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = scenario_i_file(dir.path());

    let r = rocsurf(&["estimate", "--input", input.to_str().unwrap(), "--cut", "4,2"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(r.stdout.is_empty());
    assert_eq!(json(&r.stderr)["error"]["kind"], "invalid_input");

    let r = rocsurf(&["estimate", "--input", "/nonexistent.csv", "--cut", "2,4"]);
    assert_eq!(r.status.code(), Some(1));

    // no class-2 units at all
    let units = (0..30)
        .map(|i| Unit::new(f64::from(i), vec![0.0], Some(if i < 15 { 1 } else { 3 })))
        .collect();
    let no_middle = write_csv(dir.path(), "nomid.csv", &Dataset::new(units).unwrap());
    let r = rocsurf(&["estimate", "--input", no_middle.to_str().unwrap(), "--cut", "5,20", "--estimator", "complete"]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(json(&r.stderr)["error"]["kind"], "empty_class");

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let out = dir.path().join("never.csv");
    let r = rocsurf(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}
