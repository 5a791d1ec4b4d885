use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shm_core::adc::{FIXTURE_OHMS, LSB_OHMS};
use shm_core::dataset::read_table1_csv;
use shm_core::wire::framing::read_message;
use shm_core::wire::{decode, MAX_FRAME_LEN};

fn shm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shm")).args(args).env("RUST_LOG", "warn").output().expect("run shm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn help_and_usage_errors() {
    for cmd in [
        "simulate-node",
        "serve",
        "gateway",
        "train",
        "evaluate",
        "bench-latency",
        "sync",
        "generate",
    ] {
        assert_eq!(code(&shm(&[cmd, "--help"])), 0, "{cmd}");
    }
    assert_eq!(code(&shm(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&shm(&["simulate-node", "--channels", "4"])), 2);
}

fn generate_training(dir: &Path, name: &str, rows: &str) -> PathBuf {
    let data = dir.join(name);
    let out = shm(&["generate", "training", "--rows", rows, "--seed", "3", "--out", arg(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn train_is_reproducible_and_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_training(dir.path(), "train.csv", "300");
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"hidden_widths":[8],"learning_rates":[0.01],"batch_sizes":[32],"max_epochs":60,"patience":20,"tolerance":0.0001}"#,
    )
    .unwrap();
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let model = dir.path().join(format!("{run}.json"));
        let out = shm(&["train", "--data", arg(&data), "--channels", "2", "--grid", arg(&grid), "--out", arg(&model)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        models.push(std::fs::read(&model).unwrap());
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{run}.json.report.json"))).unwrap())
                .unwrap();
        assert!(report["test_mse"].as_f64().unwrap().is_finite());
        assert!(report["test_mae"].as_f64().unwrap().is_finite());
        assert_eq!(report["trials"].as_array().unwrap().len(), 1);
    }
    assert_eq!(models[0], models[1]);

    let eval = shm(&["evaluate", "--model", arg(&dir.path().join("a.json")), "--data", arg(&data)]);
    assert_eq!(code(&eval), 0);
    let metrics: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(metrics["rows"], 300);

    let wrong = shm(&["train", "--data", arg(&data), "--channels", "8", "--out", arg(&dir.path().join("c.json"))]);
    assert_eq!(code(&wrong), 2);
}

fn sync_pair(dir: &Path, offset: &str) -> (PathBuf, PathBuf, PathBuf) {
    let (mech, res, truth) = (dir.join("mech.csv"), dir.join("res.csv"), dir.join("truth.csv"));
    let out = shm(&[
        "generate",
        "sync-pair",
        "--offset",
        offset,
        "--duration",
        "300",
        "--mech-rate",
        "2",
        "--res-rate",
        "2",
        "--seed",
        "9",
        "--mech-out",
        arg(&mech),
        "--res-out",
        arg(&res),
        "--truth-out",
        arg(&truth),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (mech, res, truth)
}

fn assert_same_rows(actual: &Path, expected: &Path) {
    let a = read_table1_csv(&std::fs::read_to_string(actual).unwrap()).unwrap();
    let e = read_table1_csv(&std::fs::read_to_string(expected).unwrap()).unwrap();
    assert_eq!(a.len(), e.len());
    for (x, y) in a.iter().zip(&e) {
        assert_eq!(x.strain, y.strain);
        assert_eq!(x.resistances, y.resistances);
        assert!((x.time - y.time).abs() < 1e-9 && (x.t - y.t).abs() < 1e-9);
    }
}

#[test]
fn sync_recovers_generated_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let (mech, res, truth) = sync_pair(dir.path(), "-37.25");
    let out_path = dir.path().join("aligned.csv");
    let out = shm(&["sync", "--mech", arg(&mech), "--res", arg(&res), "--out", arg(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_same_rows(&out_path, &truth);

    let given = shm(&["sync", "--mech", arg(&mech), "--res", arg(&res), "--offset", "-37.25", "--out", arg(&out_path)]);
    assert_eq!(code(&given), 0);
    assert_same_rows(&out_path, &truth);

    let far = shm(&["sync", "--mech", arg(&mech), "--res", arg(&res), "--offset", "100000", "--out", arg(&out_path)]);
    assert_eq!(code(&far), 2);
}

#[test]
fn sync_with_zero_offset_is_identity_on_aligned_clocks() {
    let dir = tempfile::tempdir().unwrap();
    let (mech, res, truth) = sync_pair(dir.path(), "0");
    let out_path = dir.path().join("aligned.csv");
    let out = shm(&["sync", "--mech", arg(&mech), "--res", arg(&res), "--offset", "0", "--out", arg(&out_path)]);
    assert_eq!(code(&out), 0);
    assert_same_rows(&out_path, &truth);
}

#[test]
fn simulate_node_streams_fixture_frames() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let child = std::thread::spawn(move || {
        shm(&["simulate-node", "--connect", &addr, "--tick", "0.01", "--frames", "5", "--node-id", "3"])
    });
    let (mut stream, _) = listener.accept().unwrap();
    let mut frames = Vec::new();
    while let Some(bytes) = read_message(&mut stream, MAX_FRAME_LEN).unwrap() {
        frames.push(decode(&bytes).unwrap());
    }
    assert_eq!(code(&child.join().unwrap()), 0);
    assert_eq!(frames.len(), 5);
    for (k, f) in frames.iter().enumerate() {
        assert_eq!((f.node_id, f.counter), (3, k as u32));
        for (r, truth) in f.resistances.iter().zip(FIXTURE_OHMS) {
            assert!((r - truth).abs() <= LSB_OHMS / 2.0);
        }
    }
}

#[test]
fn bad_inputs_exit_with_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let replay = format!("replay:{}", missing.display());
    assert_eq!(code(&shm(&["simulate-node", "--profile", &replay, "--frames", "1"])), 2);
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "not a model").unwrap();
    assert_eq!(code(&shm(&["serve", "--addr", "127.0.0.1:0", "--model", arg(&junk), "--duration", "0.1"])), 2);
    assert_eq!(code(&shm(&["gateway", "--trigger", "delta:-1", "--duration", "0.1"])), 2);
}

#[test]
fn bench_latency_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("push.json");
    let out = shm(&["bench-latency", "--mode", "push", "--frames", "20", "--out", arg(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["records"], 20);
    assert_eq!(report["end_to_end"].as_array().unwrap().len(), 20);
    assert!(report["summary"]["p95"].as_f64().unwrap() < 1.0);
}

#[test]
fn bundled_training_data_regenerates_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for channels in ["2", "8"] {
        let name = format!("synthetic_{channels}ch.csv");
        let out_path = dir.path().join(&name);
        let out = shm(&["generate", "training", "--channels", channels, "--seed", "0", "--out", arg(&out_path)]);
        assert_eq!(code(&out), 0);
        assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(bundled(&name)).unwrap(), "{name}");
    }
}
