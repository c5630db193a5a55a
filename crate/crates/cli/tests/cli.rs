use std::path::Path;
use std::process::{Command, Output};

fn adgkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adgkt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "seed": 3,
        "batch_size": 16,
        "epochs_agree": 2,
        "epochs_disagree": 1,
        "epochs_ensemble": 1,
        "feat_dim": 6,
        "hidden_dim": 8,
        "enc_dim": 6,
        "synth": {
            "bands_source": 10,
            "bands_target": 8,
            "classes_source": 4,
            "classes_target": 3,
            "shared_classes": 2,
            "samples_per_class_source": 12,
            "samples_per_class_target": 14,
            "seed": 3
        }
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_data_writes_four_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("data");
    stdout(&adgkt(&[
        "gen-data",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    for name in [
        "source.csv",
        "target.csv",
        "target_train.csv",
        "target_eval.csv",
    ] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(text.lines().count() > 1, "{name} is empty");
    }
    let train_rows = std::fs::read_to_string(out.join("target_train.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(train_rows, 3 * 10);
}

#[test]
fn train_then_eval_reproduces_reported_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    stdout(&adgkt(&[
        "gen-data",
        "--config",
        &cfg,
        "--out-dir",
        data.to_str().unwrap(),
    ]));

    let log = dir.path().join("run.jsonl");
    let model = dir.path().join("model.bin");
    let trained = stdout(&adgkt(&[
        "train",
        "--config",
        &cfg,
        "--log",
        log.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]));
    let eval = dir.path().join("data/target_eval.csv");
    let scored = stdout(&adgkt(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--data",
        eval.to_str().unwrap(),
    ]));
    assert_eq!(
        trained.trim().trim_start_matches("target eval: "),
        scored.trim()
    );

    let text = std::fs::read_to_string(&log).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    for key in ["oa", "aa", "kappa"] {
        assert!(last[key].is_number(), "missing {key}");
    }
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["phase"], "agreement");
}

#[test]
fn ablate_prints_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let log = dir.path().join("ablate.jsonl");
    let table = stdout(&adgkt(&[
        "ablate",
        "--config",
        &cfg,
        "--log",
        log.to_str().unwrap(),
    ]));
    assert_eq!(table.lines().count(), 6);
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["use_gradvac"], false);
    assert_eq!(rows[4]["use_dir"], true);
    for r in &rows {
        let oa = r["oa"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&oa));
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"learning_rate": 0.1}"#).unwrap();
    let log = dir.path().join("x.jsonl");
    let o = adgkt(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}
