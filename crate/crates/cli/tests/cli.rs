use std::path::Path;
use std::process::Command;

fn ppdet(out: &Path, args: &[&str]) -> String {
    let res = Command::new(env!("CARGO_BIN_EXE_ppdet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    assert!(
        res.status.success(),
        "ppdet {args:?} failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    String::from_utf8_lossy(&res.stdout).into_owned()
}

fn image(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/images")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn share_writes_uniform_shares() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppdet(dir.path(), &["share", &image("camera.png"), "--seed", "3"]);
    assert!(out.contains("share1: chi-square p"));
    assert!(dir.path().join("share1.pgm").exists());
    assert!(dir.path().join("share2.pgm").exists());
    let csv = std::fs::read_to_string(dir.path().join("share_histograms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn oracle_output_compares_equal_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    ppdet(dir.path(), &["oracle", &image("coins.png")]);
    let det = dir.path().join("oracle.jsonl").display().to_string();
    assert!(dir.path().join("weights.bin").exists());
    ppdet(dir.path(), &["compare", &det, &det]);
    let agree: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    assert_eq!(agree["max_rel_dev"].as_f64(), Some(0.0));
}

#[test]
fn bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    ppdet(dir.path(), &["bench", "--protocols", "comp,ds", "--sizes", "50"]);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_image_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_ppdet"))
        .args(["oracle", "missing.png", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing.png"));
}
