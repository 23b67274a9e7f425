//! The command-line front end: smoke runs, exit codes and reports.

use std::path::Path;
use std::process::{Command, Output};

use panorecon::pipeline::{SceneManifest, STAGES};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panorecon"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CONFIG: &str = r#"
input = "gt/panorama.png"
output_dir = "run"
center = [0.3, -0.2, 0.15]
provider.global.synthetic.position = [0.3, -0.2, 0.15]
provider.detail.synthetic.position = [0.3, -0.2, 0.15]
provider.detail.synthetic.corruption.face_scale = [1, 1, 1.05, 1.05, 1.1025, 1.1025]
"#;

fn synth(dir: &Path) {
    let o = cli(dir, &["synth", "--out", "gt", "--width", "256", "--height", "128", "--position", "0.3,-0.2,0.15"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(dir.join("cfg.toml"), CONFIG).unwrap();
}

#[test]
fn synth_then_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for f in ["panorama.png", "inverse_depth.pfm", "scene.json"] {
        assert!(d.join("gt").join(f).is_file());
    }
    let o = cli(d, &["--config", "cfg.toml", "--threads", "1", "pipeline", "--report", "report.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scene.ply", "scene.meta.json", "manifest.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    let report = std::fs::read_to_string(d.join("report.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let stages: Vec<&str> = lines.iter().filter_map(|l| l["stage"].as_str()).collect();
    let mut want = STAGES[..8].to_vec();
    want.push("total");
    assert_eq!(stages, want);
    let summary = lines.last().unwrap();
    assert_eq!(summary["command"], "pipeline");

    let m = SceneManifest::load(d.join("run/manifest.json")).unwrap();
    assert_eq!(summary["config_hash"], m.config_hash.as_str());
    assert!(m.seam.mean.unwrap() < 0.05);
}

#[test]
fn flags_and_set_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = cli(
        d,
        &[
            "--config", "cfg.toml", "--set", "lift.stride=2", "pipeline", "--face-size", "32", "--output-dir", "o2",
            "--alignment", "per_face",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = SceneManifest::load(d.join("o2/manifest.json")).unwrap();
    assert_eq!(m.face_size, 32);
    assert_eq!(m.config.lift.stride, 2);
    assert_eq!(m.gaussian_count, 6 * 16 * 16);
    assert_eq!(m.config.fusion.alignment, panorecon::pipeline::AlignmentMode::PerFace);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let cases: Vec<Vec<&str>> = vec![
        vec!["pipeline", "--bogus"],
        vec!["pipeline"],
        vec!["--config", "missing.toml", "pipeline"],
        vec!["--config", "cfg.toml", "pipeline", "--face-size", "0"],
        vec!["--config", "cfg.toml", "--set", "fusion.levles=3", "pipeline"],
        vec!["--config", "cfg.toml", "pipeline", "--input", "nope.png"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = cli(d, &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!d.join("run").exists());
}

#[test]
fn merge_with_five_faces_names_the_missing_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for args in [
        vec!["--config", "cfg.toml", "project", "--out", "s", "--face-size", "32"],
        vec!["--config", "cfg.toml", "fuse-depth", "--faces", "s", "--out", "s"],
        vec!["--config", "cfg.toml", "lift", "--faces", "s", "--depth", "s", "--out", "s"],
    ] {
        let o = cli(d, &args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = cli(
        d,
        &["merge", "s/face_px.ply", "s/face_nx.ply", "s/face_py.ply", "s/face_pz.ply", "s/face_nz.ply", "--out", "m.ply"],
    );
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing face(s): ny"), "{err}");

    let o = cli(
        d,
        &["merge", "s/face_px.ply", "s/face_nx.ply", "s/face_py.ply", "s/face_ny.ply", "s/face_pz.ply", "s/face_nz.ply", "--out", "m.ply"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn provider_failure_exits_4_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    std::fs::create_dir(d.join("empty")).unwrap();
    let o = cli(
        d,
        &["--config", "cfg.toml", "--set", "provider.global.kind=\"file\"", "--set", "provider.global.base_path=\"empty\"", "pipeline"],
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fetch_global_depth"), "{err}");
    assert!(!d.join("run").exists());
}

#[test]
fn malformed_scene_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.ply"), b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    let o = cli(d, &["render", "--scene", "bad.ply", "--equirect", "16", "--out", "x.png"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_reports_seams_and_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = cli(d, &["--config", "cfg.toml", "--set", "save_intermediates=true", "--set", "eval.render=true", "pipeline"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = cli(d, &["eval", "--seam", "run", "--psnr", "run/render.png", "gt/panorama.png"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["seam"]["edges"].as_array().unwrap().len(), 12);
    let m = SceneManifest::load(d.join("run/manifest.json")).unwrap();
    assert_eq!(lines[0]["seam"]["mean"].as_f64(), m.seam.mean);
    assert_eq!(lines[1]["psnr_db"].as_f64(), Some(m.eval.unwrap().psnr_db));
    assert!(String::from_utf8_lossy(&o.stderr).contains("edge"));
}
