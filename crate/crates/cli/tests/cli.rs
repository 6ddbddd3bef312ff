use std::path::Path;
use std::process::{Command, Output};

fn echovalve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echovalve")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ten_patient_manifest(dir: &Path) -> std::path::PathBuf {
    let mut text = String::from("# clip_id|acquired_at|frame_rate|heartbeats|frame_count|view\n");
    for p in 0..10 {
        for c in 0..2 {
            text += &format!("p{p}c{c}|2017-04-{:02}T09:{:02}:00|50|1|50|Apical4\n", p + 1, c * 10);
        }
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn split_ten_patients_six_two_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = ten_patient_manifest(dir.path());
    let out = dir.path().join("split.txt");
    let o = echovalve(&["split", "--manifest", s(&manifest), "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let count = |name: &str| text.lines().filter(|l| l.ends_with(&format!("|{name}"))).count();
    assert_eq!((count("train"), count("validation"), count("test")), (6, 2, 2));
    let clips = std::fs::read_to_string(dir.path().join("split.txt.clips")).unwrap();
    assert_eq!(clips.lines().filter(|l| !l.starts_with('#')).count(), 20);
}

#[test]
fn oracle_pipeline_evaluates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let conv = d.join("conv");
    assert!(echovalve(&["phantom-gen", "--views", "Apical3,Apical4", "--clips-per-view", "2", "--seed", "9", "--out", s(&data)])
        .status
        .success());
    assert!(echovalve(&["preprocess", "--manifest", s(&data.join("manifest.txt")), "--out", s(&conv)])
        .status
        .success());
    let dets = d.join("dets.txt");
    let o = echovalve(&[
        "run-pipeline", "--ckpt", "truth", "--detector", "oracle",
        "--ground-truth", s(&conv.join("ground_truth.txt")), "--input", s(&conv.join("images.txt")),
        "--overlay-out", s(&d.join("ov")), "--json-out", s(&d.join("r.jsonl")),
        "--detections-out", s(&dets), "--jitter", "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = d.join("det.md");
    let o = echovalve(&[
        "eval-detect", "--detections", s(&dets), "--ground-truth", s(&conv.join("ground_truth.txt")),
        "--report", s(&report),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    let all = text.lines().find(|l| l.starts_with("| All |")).unwrap();
    assert!(all.ends_with("| 1.000 | 1.000 | 1.000 | 1.000 |"), "{all}");

    let cls = d.join("cls.md");
    let o = echovalve(&["eval-classify", "--ckpt", "truth", "--test", s(&conv.join("images.txt")), "--report", s(&cls)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&cls).unwrap().contains("1.000"));

    let results = std::fs::read_to_string(d.join("r.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(results.lines().next().unwrap()).unwrap();
    assert!(first.get("detections").is_some());
}

#[test]
fn usage_errors_exit_with_one() {
    let o = echovalve(&["split", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    let o = echovalve(&["eval-detect", "--detections", "/nonexistent/a", "--ground-truth", "/nonexistent/b", "--report", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn malformed_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(&m, "clip0|not-a-time|50|1|50|Apical4\n").unwrap();
    let o = echovalve(&["split", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}
