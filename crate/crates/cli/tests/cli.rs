use std::path::Path;
use std::process::Command;

use mcgan_cli::commands::{
    load_checkpoint, load_pipeline, CHECKPOINT_FILE, HISTORY_FILE, LEADERBOARD_FILE, SWEEP_BEST_FILE,
};
use mcgan_cli::run_args;
use mcgan_core::datasets::Table;
use mcgan_core::features::PcaModel;

const TOY_SMALL: &str = "experiment = toy\nseed = 3\ntoy.n_points = 80\ntrain.epochs = 6\ntrain.validation_interval = 2\ntrain.hidden_width = 8\nsweep.widths = 4,8\nsweep.restarts = 2\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcgan"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mcgan(args: &[&str]) {
    let mut full = vec!["mcgan"];
    full.extend_from_slice(args);
    run_args(full).unwrap_or_else(|e| panic!("{args:?}: {e}"));
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn help_exits_0() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("sim-gen"));
}

#[test]
fn bad_config_key_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\ntrain.epoch = 5\n").unwrap();
    let out = bin().args(["--config", s(&cfg), "toy-gen"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]: "), "{err}");
    assert!(err.contains("bad.cfg:2"), "{err}");
    assert!(err.contains("train.epoch"), "{err}");
}

#[test]
fn missing_data_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "--out",
            s(dir.path()),
            "train",
            "--data",
            s(&dir.path().join("nowhere")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error["), "{err}");
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn unknown_evaluation_code_lists_available_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY_SMALL).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    mcgan(&["--config", s(&cfg), "--out", s(&data), "toy-gen"]);
    mcgan(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&data)]);
    let out = bin()
        .args(["--config", s(&cfg), "--out", s(&run), "evaluate", "--data", s(&data)])
        .args(["--checkpoint", s(&run.join(CHECKPOINT_FILE)), "--codes", "9.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("9.5"), "{err}");
}

#[test]
fn generate_outside_trained_range_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY_SMALL).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    mcgan(&["--config", s(&cfg), "--out", s(&data), "toy-gen"]);
    mcgan(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&data)]);
    let out = bin()
        .args(["--config", s(&cfg), "--out", s(&run), "generate", "--data", s(&data)])
        .args([
            "--checkpoint",
            s(&run.join(CHECKPOINT_FILE)),
            "--code-min",
            "-3",
            "--code-max",
            "3",
            "--n-codes",
            "4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("warning: "));
    let rows = data_rows(&run.join("manifold.csv"));
    assert_eq!(rows.len(), 4 * 100);
}

#[test]
fn history_and_checkpoint_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY_SMALL).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    mcgan(&["--config", s(&cfg), "--out", s(&data), "toy-gen"]);
    mcgan(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&data)]);

    let history = data_rows(&run.join(HISTORY_FILE));
    let epochs: Vec<usize> = history.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(epochs, vec![2, 4, 6]);
    let best = load_checkpoint(&run.join(CHECKPOINT_FILE)).unwrap();
    let min = history
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(best.val_kl <= min);
    if best.epoch > 0 {
        assert_eq!(best.val_kl, min);
        let row = history.iter().find(|r| r[0] == best.epoch.to_string()).unwrap();
        assert_eq!(row[1].parse::<f64>().unwrap(), best.val_kl);
    }
    // Per-code columns sum to the cumulative column.
    for r in &history {
        let total: f64 = r[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - r[1].parse::<f64>().unwrap()).abs() <= 1e-12 * total.max(1.0));
    }
}

#[test]
fn sweep_saves_the_leaderboard_winner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, TOY_SMALL).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("sweep");
    mcgan(&["--config", s(&cfg), "--out", s(&data), "toy-gen"]);
    mcgan(&["--config", s(&cfg), "--out", s(&out), "sweep", "--data", s(&data)]);
    let rows = data_rows(&out.join(LEADERBOARD_FILE));
    assert_eq!(rows.len(), 4);
    let vals: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    let best = load_checkpoint(&out.join(SWEEP_BEST_FILE)).unwrap();
    assert_eq!(best.val_kl, vals[0]);
    assert_eq!(best.pair.hidden_width().to_string(), rows[0][1]);
}

#[test]
fn simulation_outputs_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    std::fs::write(&cfg, "experiment = simulation\nseed = 2\nsim.n_per_temperature = 12\n").unwrap();
    let data = dir.path().join("data");
    mcgan(&["--config", s(&cfg), "--out", s(&data), "sim-gen"]);

    let raw = Table::read(&data.join("sim_raw.csv")).unwrap();
    assert_eq!(raw.rows.nrows(), 11 * 12);
    assert_eq!(raw.columns[1], "humidity");

    let projected = Table::read(&data.join("sim_projected.csv")).unwrap();
    assert_eq!(projected.columns, vec!["temperature", "pc_1", "pc_2", "pc_3"]);
    assert!(projected.column_index("humidity").is_none());

    let train = Table::read(&data.join("sim_train.csv")).unwrap();
    let val = Table::read(&data.join("sim_validation.csv")).unwrap();
    let test = Table::read(&data.join("sim_test.csv")).unwrap();
    assert_eq!(train.rows.nrows(), 9 * 12);
    assert!(val.rows.column(0).iter().all(|&t| t == 24.0));
    assert!(test.rows.column(0).iter().all(|&t| t == 34.0));
    assert!(train.rows.column(0).iter().all(|&t| t != 24.0 && t != 34.0));
    // Normalized scores lie in [-1, 1] because the normalizer was fit on all records.
    assert!(projected.rows.columns(1, 3).iter().all(|v| v.abs() <= 1.0 + 1e-12));

    let text = std::fs::read_to_string(data.join("pca.txt")).unwrap();
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let pca = PcaModel::from_text("pca.txt", &body).unwrap();
    assert_eq!(pca.n_components(), 3);
    assert_eq!(pca.n_features(), raw.columns.len() - 2);
    let pipeline = load_pipeline(&data).unwrap();
    assert_eq!(pipeline.pca, pca);
}
