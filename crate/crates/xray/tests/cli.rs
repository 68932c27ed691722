//! End-to-end tests driving the compiled `xray` binary.

use std::path::Path;
use std::process::Command;

fn xray() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xray"))
}

fn scene_config() -> serde_json::Value {
    let n_frames = 8;
    let radius = 10.0;
    let ego: Vec<_> = (0..n_frames)
        .map(|f| {
            let az = std::f64::consts::TAU * f as f64 / n_frames as f64;
            serde_json::json!({
                "center": [radius * az.cos(), radius * az.sin(), if f % 2 == 0 { 3.0 } else { -3.0 }],
                "yaw": 0.0
            })
        })
        .collect();
    serde_json::json!({
        "n_frames": n_frames,
        "objects": [{
            "shape": "box",
            "size": [4.0, 2.0, 1.5],
            "trajectory": (0..n_frames)
                .map(|_| serde_json::json!({"center": [0.0, 0.0, 0.75], "yaw": 0.3}))
                .collect::<Vec<_>>(),
        }],
        "ego_trajectory": ego,
        "points_per_m2": 40.0,
        "lidar_range": 60.0,
        "background_points_per_frame": 100,
        "seed": 7
    })
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("failed to launch xray");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_scene(dir: &Path) -> std::path::PathBuf {
    let config = dir.join("scene.json");
    std::fs::write(&config, serde_json::to_string_pretty(&scene_config()).unwrap()).unwrap();
    config
}

#[test]
fn full_pipeline_simulate_track_fuse_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(dir.path());
    let sim = dir.path().join("sim");
    let tracks = dir.path().join("tracks.json");
    let fused = dir.path().join("fused");
    let report = dir.path().join("eval.json");

    run_ok(xray().args(["simulate", "--config"]).arg(&config).arg("--out").arg(&sim));
    assert!(sim.join("manifest.json").is_file());
    assert!(sim.join("ground_truth").is_dir());

    let out = run_ok(xray()
        .args(["track", "--in"])
        .arg(&sim)
        .args(["--mode", "greedy", "--out"])
        .arg(&tracks));
    assert!(out.contains("1 tracks"), "expected a single track: {out}");

    run_ok(xray()
        .args(["fuse", "--in"])
        .arg(&sim)
        .arg("--tracks")
        .arg(&tracks)
        .args(["--strategy", "geometry", "--subsample-factor", "inf", "--out"])
        .arg(&fused));
    assert!(fused.join("fusion_report.json").is_file());

    let out = run_ok(xray()
        .args(["eval", "--fused"])
        .arg(&fused)
        .arg("--truth")
        .arg(&sim)
        .arg("--tracks")
        .arg(&tracks)
        .arg("--out")
        .arg(&report));
    assert!(out.contains("tracking precision 1.0000 recall 1.0000"), "{out}");

    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let best = eval["objects"][0]["coverage_best"].as_f64().unwrap();
    assert!(best > 0.9, "fused coverage should be high, got {best}");

    // exporting the fused frame with highlighting against the original
    let ply = dir.path().join("frame0.ply");
    run_ok(xray()
        .args(["export-ply", "--in"])
        .arg(&fused)
        .args(["--frame", "0", "--highlight-added", "--original"])
        .arg(&sim)
        .arg("--out")
        .arg(&ply));
    let text = std::fs::read_to_string(&ply).unwrap();
    assert!(text.starts_with("ply\n"));
    assert!(text.contains("property uchar red"));
}

#[test]
fn fuse_without_instances_preserves_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = scene_config();
    value["objects"] = serde_json::json!([]);
    let config = dir.path().join("scene.json");
    std::fs::write(&config, serde_json::to_string(&value).unwrap()).unwrap();
    let sim = dir.path().join("sim");
    let tracks = dir.path().join("tracks.json");
    let fused = dir.path().join("fused");

    run_ok(xray().args(["simulate", "--config"]).arg(&config).arg("--out").arg(&sim));
    run_ok(xray()
        .args(["track", "--in"])
        .arg(&sim)
        .args(["--mode", "greedy", "--out"])
        .arg(&tracks));
    run_ok(xray()
        .args(["fuse", "--in"])
        .arg(&sim)
        .arg("--tracks")
        .arg(&tracks)
        .arg("--out")
        .arg(&fused));

    for f in 0..8 {
        let name = format!("points_{f:06}.bin");
        let a = std::fs::read(sim.join(&name)).unwrap();
        let b = std::fs::read(fused.join(&name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical with nothing to fuse");
    }
}

#[test]
fn losses_identical_tensors_give_zero() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, shape: Vec<usize>, data: Vec<f64>| {
        let path = dir.path().join(name);
        let t = xray::distill::Tensor::new(shape, data).unwrap();
        xray::io::write_tensor(&path, &t).unwrap();
        path
    };
    let cls = write("cls.xrtn", vec![2, 3], vec![0.2, 0.3, 0.5, 0.1, 0.8, 0.1]);
    let reg = write("reg.xrtn", vec![4], vec![1.0, -2.0, 0.5, 3.0]);
    let feat = write("feat.xrtn", vec![2, 2, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);

    let out = run_ok(xray()
        .arg("losses")
        .arg("--teacher-cls")
        .arg(&cls)
        .arg("--student-cls")
        .arg(&cls)
        .arg("--teacher-reg")
        .arg(&reg)
        .arg("--student-reg")
        .arg(&reg)
        .arg("--teacher-feat")
        .arg(&feat)
        .arg("--student-feat")
        .arg(&feat));
    let breakdown: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(breakdown["total"].as_f64().unwrap(), 0.0);
    assert_eq!(breakdown["l_heads"].as_f64().unwrap(), 0.0);
}

#[test]
fn missing_input_reports_single_error_line() {
    let out = xray()
        .args(["track", "--in", "/nonexistent/sequence", "--mode", "greedy", "--out", "/tmp/t.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr: {stderr}");
}

#[test]
fn invalid_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, "{\"n_frames\": 0}").unwrap();
    let out = xray()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
