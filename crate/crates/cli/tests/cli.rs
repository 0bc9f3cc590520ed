use std::path::Path;
use std::process::{Command, Output};

use equivar::checkpoint::Checkpoint;
use equivar::io::write_extxyz_file;
use equivar::model::{Model, ModelConfig, Readout};
use equivar::potentials::morse_dimer_dataset;
use serde_json::{json, Value};

fn equivar(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equivar"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, value: Value) -> String {
    write_named(dir, "run.json", value)
}

fn write_named(dir: &Path, name: &str, value: Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn metrics(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("eval prints JSON")
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = equivar(&["selftest", "--seed", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 9 && text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bad_configurations_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(equivar(&["eval"], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), json!({"train": {"learning_rate": 0.001, "momentum": 0.9}}));
    let out = equivar(&["train", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));
    let cfg = write_config(
        dir.path(),
        json!({"data": {"path": "x.xyz", "val_size": 2}, "train": {"force_weight": 1.5}}),
    );
    assert_eq!(equivar(&["train", "--config", &cfg], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), json!({"checkpoint": "m.ckpt"}));
    assert_eq!(
        equivar(&["predict", "--config", &cfg], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        equivar(&["selftest", "--device-threads", "0"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(equivar(&["launch"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"checkpoint": "missing.ckpt", "data": {"path": "missing.xyz"}}),
    );
    assert_eq!(equivar(&["eval", "--config", &cfg], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("broken.xyz"), "2\n\nH 0 0 0\n").unwrap();
    let model = Model::new(
        ModelConfig {
            features: 4,
            n_blocks: 1,
            n_rbf: 4,
            max_z: 9,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    Checkpoint::new(model).save(dir.path().join("m.ckpt")).unwrap();
    let cfg = write_config(dir.path(), json!({"checkpoint": "m.ckpt", "input": "broken.xyz"}));
    let out = equivar(&["predict", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn predictions_evaluate_to_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig {
        features: 8,
        n_blocks: 2,
        n_rbf: 6,
        max_z: 9,
        readouts: vec![
            Readout::Energy,
            Readout::Dipole { charges_only: false },
            Readout::Polarizability,
            Readout::SpatialExtent,
        ],
        ..ModelConfig::default()
    };
    Checkpoint::new(Model::new(config, 12).unwrap())
        .save(dir.path().join("model.ckpt"))
        .unwrap();
    let frames: Vec<_> = morse_dimer_dataset(7, 4)
        .into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            s.atomic_numbers = vec![1, if k % 2 == 0 { 8 } else { 6 }];
            s.labels = Default::default();
            s
        })
        .collect();
    write_extxyz_file(dir.path().join("frames.xyz"), &frames).unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"checkpoint": "model.ckpt", "input": "frames.xyz", "data": {"path": "out/predictions.xyz"}, "train": {"batch_size": 3}}),
    );
    let out = equivar(&["predict", "--config", &cfg, "--out", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = equivar(&["eval", "--config", &cfg, "--out", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(&out);
    for key in [
        "energy_mae",
        "force_mae",
        "dipole_mae",
        "polarizability_mae",
        "spatial_extent_mae",
    ] {
        assert_eq!(m[key].as_f64(), Some(0.0), "{key}: {m}");
    }
    assert!(dir.path().join("out/eval.json").exists());
}

#[test]
fn train_then_eval_on_morse_dimers() {
    let dir = tempfile::tempdir().unwrap();
    let data = morse_dimer_dataset(120, 1);
    let forces: Vec<f64> = data
        .iter()
        .flat_map(|s| s.labels.forces.clone().unwrap().into_iter().flatten())
        .collect();
    let mean = forces.iter().sum::<f64>() / forces.len() as f64;
    let std = (forces.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / forces.len() as f64).sqrt();
    write_extxyz_file(dir.path().join("morse.xyz"), &data).unwrap();
    let cfg = write_config(
        dir.path(),
        json!({
            "seed": 1,
            "model": {"features": 32, "n_blocks": 2, "n_rbf": 20, "max_z": 1},
            "train": {"batch_size": 10, "learning_rate": 0.001, "force_weight": 0.95,
                      "decay_patience": 475, "stopping_patience": 1425, "max_epochs": 2000},
            "data": {"path": "morse.xyz", "train_size": 100, "val_size": 20},
            "checkpoint": "run/model.ckpt"
        }),
    );
    let out = equivar(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    assert!(log.lines().count() > 100);
    let out = equivar(&["eval", "--config", &cfg, "--out", "run"], dir.path());
    assert!(out.status.success());
    let mae = metrics(&out)["force_mae"].as_f64().unwrap();
    assert!(mae < 0.01 * std, "force MAE {mae} vs label std {std}");
}

#[test]
fn md_then_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig {
        features: 8,
        n_blocks: 1,
        n_rbf: 6,
        max_z: 9,
        readouts: vec![
            Readout::Energy,
            Readout::Dipole { charges_only: false },
            Readout::Polarizability,
        ],
        ..ModelConfig::default()
    };
    Checkpoint::new(Model::new(config, 2).unwrap())
        .save(dir.path().join("model.ckpt"))
        .unwrap();
    let mut start = morse_dimer_dataset(1, 3).remove(0);
    start.atomic_numbers = vec![6, 8];
    write_extxyz_file(dir.path().join("start.xyz"), &[start]).unwrap();
    let md_cfg = write_named(
        dir.path(),
        "md.json",
        json!({"checkpoint": "model.ckpt", "input": "start.xyz",
               "md": {"dt": 0.5, "n_steps": 400, "ensemble": "langevin", "record_stride": 2,
                      "record_dipole": true, "record_polarizability": true}}),
    );
    let out = equivar(&["md", "--config", &md_cfg, "--out", "md", "--seed", "9"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(dir.path().join("md/trajectory.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 400 / 2 + 1);
    write_named(
        dir.path(),
        "spectra.json",
        json!({"input": "md/trajectory.csv", "spectra": {"depth_fs": 40.0}}),
    );
    let out = equivar(&["spectra", "--config", "spectra.json", "--out", "spectra"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["ir", "raman_isotropic", "raman_anisotropic"] {
        assert!(dir.path().join(format!("spectra/{name}.csv")).exists());
        assert!(dir.path().join(format!("spectra/{name}.json")).exists());
    }
    let deep = write_config(
        dir.path(),
        json!({"input": "md/trajectory.csv", "spectra": {"depth_fs": 1e6}}),
    );
    assert_eq!(
        equivar(&["spectra", "--config", &deep], dir.path()).status.code(),
        Some(2)
    );
}
