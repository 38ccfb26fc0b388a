use std::path::Path;
use std::process::Command;

fn dp_relu(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dp-relu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &std::process::Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("curves")] {
        let mut entries: Vec<_> = std::fs::read_dir(&sub).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries.into_iter().filter(|p| p.extension().is_some_and(|x| x == "csv")) {
            files.push((path.display().to_string().replace(&dir.display().to_string(), ""), std::fs::read(&path).unwrap()));
        }
    }
    files
}

const GRID: &[&str] = &[
    "--synthetic", "d=3", "n=600", "sigma=0.3",
    "--algorithm", "glmtron,dp_glmtron,dp_mbglmtron,dp_sgd",
    "--epsilon", "0.5,2",
    "--seeds", "2",
    "--batch", "20",
    "--epochs", "2",
];

#[test]
fn sweep_output_is_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, workers) in dirs.iter().zip(["1", "3"]) {
        let mut args = vec!["sweep"];
        args.extend_from_slice(GRID);
        args.extend(["--workers", workers, "--out", dir.path().to_str().unwrap()]);
        let out = dp_relu(&args);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (csv_tree(dirs[0].path()), csv_tree(dirs[1].path()));
    // summary, aggregate and 2 + 3*2*2 curves
    assert_eq!(a.len(), 2 + 14);
    assert_eq!(a, b);
    assert!(dirs[0].path().join("manifest.json").exists());
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend_from_slice(GRID);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    assert!(dp_relu(&args).status.success());

    // the manifest is a valid config file; a flag overrides its seed list
    let manifest = dir.path().join("manifest.json");
    let out = dp_relu(&[
        "train", "--config", manifest.to_str().unwrap(),
        "--algorithm", "dp_mbglmtron", "--epsilon", "2", "--seed", "1",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["algorithm"], "dp_mbglmtron");
    assert_eq!(v["seed"], 1);
    assert_eq!(v["epsilon"], 2.0);
    assert!(v["final_train"].as_f64().unwrap().is_finite());
}

#[test]
fn calibrate_matches_known_value() {
    let v = stdout_json(&dp_relu(&["calibrate", "--epsilon", "1", "--delta", "1e-5"]));
    assert!((v["noise_multiplier"].as_f64().unwrap() - 9.5971).abs() < 1e-4);
    assert!(v["epsilon_round_trip"].as_f64().unwrap() <= 1.0);

    let v = stdout_json(&dp_relu(&["calibrate", "--epsilon", "0.5", "--delta-power", "1.1", "--n", "1000", "--regime", "shuffle"]));
    assert_eq!(v["regime"], "shuffle_amplified");
    assert!(v["noise_multiplier"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_csv_source() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut body = String::from("a,b,y\n");
    for i in 0..200 {
        body.push_str(&format!("{},{},{}\n", i % 7, i % 3, 1 + i % 7 + 2 * (i % 3)));
    }
    std::fs::write(&path, body).unwrap();
    let v = stdout_json(&dp_relu(&[
        "train", "--csv", path.to_str().unwrap(), "--target", "y",
        "--algorithm", "glmtron", "--seed", "0",
    ]));
    assert_eq!(v["target_scale"], 11.0);
    assert!(v["excess_risk"].is_null());
}

#[test]
fn attack_and_check_print_reports() {
    let v = stdout_json(&dp_relu(&[
        "attack", "--synthetic", "d=5", "n=100", "sigma=1",
        "--algorithm", "glmtron", "--seed", "0", "--trials", "3", "--fresh", "200",
    ]));
    assert_eq!(v["report"]["n_in"], 300);
    assert_eq!(v["report"]["n_out"], 600);

    let v = stdout_json(&dp_relu(&["check", "--synthetic", "d=3", "design=rademacher", "--samples", "5000"]));
    assert!(v["covariance"]["max_deviation"].as_f64().unwrap() < 0.2);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = dp_relu(&["train", "--algorithm", "dp_sgd", "--epsilon", "1,2", "--seed", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one --epsilon"));

    let out = dp_relu(&["train", "--csv", "/nonexistent.csv", "--target", "y", "--algorithm", "glmtron", "--seed", "0"]);
    assert!(!out.status.success());
    assert!(dp_relu(&["sweep"]).status.code() == Some(1));
}
