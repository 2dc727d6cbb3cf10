use std::path::Path;
use std::process::{Command, Output};

fn rfmkrr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfmkrr")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const LIBSVM: &str = "\
0.5 1:0.1 2:0.3
-0.2 1:0.9 2:-0.4
1.0 1:-0.5 2:0.8
0.3 1:0.2 2:0.2
-0.7 1:0.6 2:-0.9
0.1 1:-0.3 2:0.5
";

#[test]
fn fit_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.libsvm");
    std::fs::write(&data, LIBSVM).unwrap();
    for extra in [&[][..], &["--s-grid", "40"][..]] {
        let model = dir.path().join("model.bin");
        let preds = dir.path().join("preds.txt");
        let mut args = vec!["fit", "--data", path(&data), "--kernel", "laplace", "--out", path(&model)];
        args.extend_from_slice(extra);
        assert!(rfmkrr(&args).status.success());
        let out = rfmkrr(&["predict", "--model", path(&model), "--data", path(&data), "--out", path(&preds)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let values: Vec<f64> = std::fs::read_to_string(&preds)
            .unwrap()
            .lines()
            .map(|l| l.parse().unwrap())
            .collect();
        assert_eq!(values.len(), 6);
        assert!(values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn bounds_reports_json() {
    let out = rfmkrr(&["bounds", "--data", "synthetic:80:3", "--s-grid", "25", "--lambda-mult", "0.2"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n"], 80);
    assert_eq!(report["s"], 25);
    assert!(report["core_norm"].as_f64().unwrap() <= report["cap"].as_f64().unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(
        &cfg,
        "# small sweep\ndata = synthetic:300:3\nn-train = 150\nn-test = 100\ns-grid = 10,20\nrepeats = 3\n",
    )
    .unwrap();
    let out = rfmkrr(&["mse-vs-s", "--config", path(&cfg), "--s-grid", "10,20,40"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let points = rfmkrr::harness::parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(points.iter().map(|p| p.x).collect::<Vec<_>>(), vec![10, 20, 40]);
}

#[test]
fn errors_exit_with_one() {
    assert_eq!(rfmkrr(&["mse-vs-s", "--s-grid", "20,10"]).status.code(), Some(1));
    assert_eq!(rfmkrr(&["fit", "--data", "/nonexistent/file", "--out", "x"]).status.code(), Some(1));
    assert_eq!(rfmkrr(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(rfmkrr(&["bounds", "--data", "synthetic:50:2", "--kernel", "poly"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "kernal = rbf\n").unwrap();
    assert_eq!(rfmkrr(&["bounds", "--config", path(&cfg)]).status.code(), Some(1));
}

#[test]
fn verify_lemmas_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("lemmas.json");
    let out = rfmkrr(&["verify-lemmas", "--draws", "20000", "--out", path(&out_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(reports.as_array().unwrap().iter().all(|r| r["pass"] == true));
}
