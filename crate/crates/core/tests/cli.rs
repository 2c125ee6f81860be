use std::path::Path;
use std::process::Command;

fn egomocap(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_egomocap"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, out, err) = egomocap(dir, args);
    assert_eq!(code, 0, "egomocap {}: {err}", args.join(" "));
    out
}

#[test]
fn make_and_validate_camera() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["camera", "make-equidistant", "--focal", "100", "--size", "256", "--degree", "6", "-o", "cam.json"]);
    let report = ok(tmp.path(), &["camera", "validate", "cam.json", "--tol-px", "0.5"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, _) = egomocap(tmp.path(), &["prior", "refine", "--model", "m.egdm", "--input", "e.json", "-o", "r.json"]);
    assert_eq!(code, 2);
    let (code, _, err) = egomocap(tmp.path(), &["camera", "validate", "cam.json", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
    let (code, _, _) = egomocap(tmp.path(), &["synth", "motion", "--n", "2", "-o", "m"]);
    assert_eq!(code, 2, "seed is mandatory");
}

#[test]
fn domain_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = egomocap(tmp.path(), &["camera", "validate", "missing.json"]);
    assert_eq!(code, 1);
    assert!(err.contains("missing.json"));
    let (code, _, err) = egomocap(tmp.path(), &["synth", "motion", "--n", "1", "--seed", "1", "--families", "jump", "-o", "m"]);
    assert_eq!(code, 1);
    assert!(err.contains("jump"));
}

#[test]
fn version_mismatch_names_versions() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["camera", "make-equidistant", "--focal", "100", "--size", "64", "-o", "cam.json"]);
    ok(tmp.path(), &["grid", "precompute", "--camera", "cam.json", "--n", "4", "--m", "4", "-o", "grid.egsg"]);
    let path = tmp.path().join("grid.egsg");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    image::GrayImage::new(64, 64).save(tmp.path().join("img.png")).unwrap();
    let (code, _, err) = egomocap(tmp.path(), &["patches", "extract", "--grid", "grid.egsg", "--image", "img.png", "-o", "p.egpt"]);
    assert_eq!(code, 1);
    assert!(err.contains("expected 1") && err.contains("found 99"), "{err}");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["camera", "make-equidistant", "--focal", "100", "--size", "256", "-o", "cam.json"]);
    for run in ["a", "b"] {
        ok(d, &["grid", "precompute", "--camera", "cam.json", "-o", &format!("grid_{run}.egsg")]);
        ok(d, &["synth", "motion", "--n", "2", "--length", "12", "--seed", "4", "-o", &format!("motion_{run}")]);
        ok(d, &[
            "synth", "heatmaps", "--motion", &format!("motion_{run}/seq_0000.json"), "--camera", "cam.json", "--dims", "8",
            "--seed", "5", "-o", &format!("obs_{run}"),
        ]);
        ok(d, &["heatmap", "decode", "--heatmaps", &format!("obs_{run}/body.eghm"), "--camera", "cam.json", "-o", &format!("dec_{run}.json")]);
    }
    let same = |a: &str, b: &str| assert_eq!(std::fs::read(d.join(a)).unwrap(), std::fs::read(d.join(b)).unwrap(), "{a}");
    same("grid_a.egsg", "grid_b.egsg");
    same("motion_a/seq_0001.json", "motion_b/seq_0001.json");
    same("motion_a/manifest.json", "motion_b/manifest.json");
    same("obs_a/body.eghm", "obs_b/body.eghm");
    same("obs_a/hands.json", "obs_b/hands.json");
    same("dec_a.json", "dec_b.json");
}

#[test]
fn small_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["camera", "make-equidistant", "--focal", "100", "--size", "256", "-o", "cam.json"]);
    ok(d, &["synth", "motion", "--n", "4", "--length", "16", "--seed", "2", "-o", "motion"]);
    ok(d, &[
        "prior", "train", "--data", "motion", "--seed", "1", "--layers", "1", "--width", "16", "--heads", "2", "--ffn", "16",
        "--epochs", "2", "--batch-size", "2", "--window", "8", "--report", "train.json", "-o", "prior.egdm",
    ]);
    let (code, _, _) = egomocap(d, &["prior", "train", "--data", "motion", "--seed", "1", "--epochs", "1", "-o", "big.egdm"]);
    assert_eq!(code, 1, "16-frame clips are shorter than the default window");
    ok(d, &["synth", "heatmaps", "--motion", "motion/seq_0000.json", "--camera", "cam.json", "--dims", "16", "--seed", "3", "-o", "obs"]);
    ok(d, &["heatmap", "decode", "--heatmaps", "obs/body.eghm", "--camera", "cam.json", "-o", "dec.json"]);
    ok(d, &["assemble", "--body", "dec.json", "--hands", "obs/hands.json", "--camera", "cam.json", "--up", "0,-0.5,-0.866", "-o", "est.json"]);
    ok(d, &["prior", "refine", "--model", "prior.egdm", "--input", "est.json", "--t-start", "20", "--seed", "4", "-o", "ref.json"]);
    let refined = egomocap::MotionSequence::load(&d.join("ref.json")).unwrap();
    assert_eq!(refined.len(), 16);
    let report = ok(d, &["eval", "--pred", "est.json", "--gt", "obs/gt.json", "--metric", "pa-mpjpe", "--per-frame"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["n_frames"], 16);
    assert!(v["value_mm"].as_f64().unwrap() > 0.0);
}
