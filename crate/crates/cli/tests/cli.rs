use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gfloam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfloam"))
        .args(args)
        .env_remove("GF_LOG_LEVEL")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth_room(dir: &Path, frames: usize, extra: &[&str]) {
    let frames = frames.to_string();
    let mut args = vec!["synth", "--scene", "room", "--frames", &frames, "--output", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = gfloam(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(text: &[u8]) -> serde_json::Value {
    serde_json::from_slice(text).expect("valid json")
}

#[test]
fn run_full_mode_on_room() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    let out = tmp.path().join("out");
    synth_room(&data, 50, &["--sigma", "0.02"]);
    let r = gfloam(&[
        "run",
        "--input",
        data.to_str().unwrap(),
        "--mode",
        "full",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let traj = fs::read_to_string(out.join("traj.tum")).unwrap();
    assert_eq!(traj.lines().count(), 50);
    assert_eq!(fs::read_to_string(out.join("stats.jsonl")).unwrap().lines().count(), 50);
    let summary = json(&fs::read(out.join("summary.json")).unwrap());
    assert_eq!(summary["mode"], "full");
    assert_eq!(summary["frames"], 50);
    assert!(summary["ate"]["rmse_translation"].as_f64().unwrap() < 0.05);
}

#[test]
fn same_seed_gives_identical_stats() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    synth_room(&data, 15, &["--sigma", "0.02", "--seed", "3"]);
    let stats = |name: &str, mode: &str| {
        let out = tmp.path().join(name);
        let r = gfloam(&[
            "run",
            "--input",
            data.to_str().unwrap(),
            "--mode",
            mode,
            "--seed",
            "11",
            "--no-latency",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        fs::read(out.join("stats.jsonl")).unwrap()
    };
    assert_eq!(stats("a", "gf"), stats("b", "gf"));
    assert_eq!(stats("c", "rnd"), stats("d", "rnd"));
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        synth_room(dir, 3, &["--sigma", "0.05", "--outlier-rate", "0.1", "--seed", "5"]);
    }
    for name in ["scans/000000.ply", "scans/000002.ply", "gt.tum", "scene.toml", "sensor.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn select_bench_meets_bound() {
    let r = gfloam(&["select-bench", "--n", "8", "--m", "3", "--epsilon", "0.1", "--trials", "200"]);
    assert_eq!(code(&r), 0);
    let text = String::from_utf8(r.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("stochastic ")).expect("stochastic row");
    let mean: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(mean >= 1.0 - (-1.0f64).exp() - 0.1, "{text}");
    assert!(text.contains(">= bound"));
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    synth_room(&data, 10, &[]);
    let gt = data.join("gt.tum");
    let csv = tmp.path().join("aligned.csv");
    let r = gfloam(&[
        "eval",
        "--est",
        gt.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--rpe-delta",
        "2",
        "--aligned-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);
    let report = json(&r.stdout);
    assert!(report["ate"]["rmse_translation"].as_f64().unwrap() < 1e-12);
    assert!(report["rpe"]["translation"]["max"].as_f64().unwrap() < 1e-12);
    assert_eq!(report["rpe"]["delta"], 2);
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 11);
}

#[test]
fn degeneracy_calibrate_reports_every_registered_frame() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    synth_room(&data, 8, &[]);
    let r = gfloam(&["degeneracy-calibrate", "--input", data.to_str().unwrap(), "--bins", "5"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&r.stdout);
    assert_eq!(report["frames"].as_array().unwrap().len(), 7);
    assert_eq!(report["lambda_threshold"], 42.0);
    let counts: u64 = report["histogram"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 7);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&gfloam(&["bogus"])), 1);
    assert_eq!(code(&gfloam(&["run", "--input", "x", "--output", "y", "--frobnicate"])), 1);
    assert_eq!(code(&gfloam(&["run", "--input", "x", "--output", "y", "--mode", "best"])), 1);
    assert_eq!(code(&gfloam(&["select-bench", "--n", "3", "--m", "5"])), 1);
    assert_eq!(code(&gfloam(&["--help"])), 0);
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    synth_room(&data, 2, &[]);
    let run_with = |config: &str| {
        let path = tmp.path().join("c.toml");
        fs::write(&path, config).unwrap();
        code(&gfloam(&[
            "run",
            "--input",
            data.to_str().unwrap(),
            "--config",
            path.to_str().unwrap(),
            "--output",
            tmp.path().join("out").to_str().unwrap(),
        ]))
    };
    assert_eq!(run_with("[selector]\nepsilonn = 0.1\n"), 2);
    assert_eq!(run_with("[selector]\nepsilon = 2.0\n"), 2);
    assert_eq!(run_with("[pipeline]\nmode = \"best\"\n"), 2);
    assert_eq!(run_with("[selector]\nepsilon = 0.05\n"), 0);
    let missing = gfloam(&["run", "--input", data.to_str().unwrap(), "--config", "/nonexistent.toml", "--output", "o"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn data_errors_exit_three() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let missing = gfloam(&["run", "--input", "/nonexistent/scans", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&missing), 3);

    // Raw scans carry no ring index, so features cannot be extracted.
    let raw = tmp.path().join("raw");
    fs::create_dir_all(&raw).unwrap();
    let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(raw.join("000000.bin"), bytes).unwrap();
    let r = gfloam(&["run", "--input", raw.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(code(&r), 3);

    let bad = tmp.path().join("bad.tum");
    fs::write(&bad, "0 1 2\n").unwrap();
    let r = gfloam(&["eval", "--est", bad.to_str().unwrap(), "--gt", bad.to_str().unwrap()]);
    assert_eq!(code(&r), 3);
}

#[test]
fn manifest_input_with_timestamps() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("room");
    synth_room(&data, 4, &[]);
    let manifest = data.join("frames.txt");
    let lines: String = (0..4).map(|i| format!("scans/{i:06}.ply {}\n", 100.0 + i as f64 * 0.1)).collect();
    fs::write(&manifest, format!("# path timestamp\n{lines}")).unwrap();
    let out = tmp.path().join("out");
    let r = gfloam(&["run", "--input", manifest.to_str().unwrap(), "--output", out.to_str().unwrap(), "--no-latency"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let traj = fs::read_to_string(out.join("traj.tum")).unwrap();
    assert!(traj.lines().next().unwrap().starts_with("100.000000000 "));
    let summary = json(&fs::read(out.join("summary.json")).unwrap());
    assert!(summary.get("latency").is_none());
    assert!(summary["ate"].is_null(), "ground truth stamps do not overlap");
}
