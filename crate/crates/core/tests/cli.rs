use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"scenario = "small"
seed = 3

[[metric.conformal]]
amplitude = 0.05
center = [0.0, 0.0]
profile = { kind = "gaussian", sharpness = 4.0 }

[grid]
n = 16

[inflow]
z_count = 16
w_count = 8

[field]
source = "random"
"#;

fn geotomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geotomo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn run_into(cmd: &str, config: &Path, out: &Path) -> Output {
    geotomo(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ])
}

#[test]
fn sinogram_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = run_into("sinogram", &config, &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(snapshot(&out));
    }
    for name in [
        "sinogram.csv",
        "sinogram.bin",
        "resolved_config.toml",
        "summary.txt",
    ] {
        let x = &runs[0][name];
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, &runs[1][name], "{name} differs between runs");
    }
}

#[test]
fn seed_override_changes_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_into("sinogram", &config, &a).status.success());
    let o = geotomo(&[
        "sinogram",
        "--config",
        config.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "4",
        "--quiet",
    ]);
    assert!(o.status.success());
    let x = std::fs::read(a.join("sinogram.csv")).unwrap();
    let y = std::fs::read(b.join("sinogram.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn missing_field_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[field]\nsource = \"random\"\n", "");
    let config = write_config(dir.path(), &text);
    let o = run_into("sinogram", &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`field`"), "{err}");
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n = 16\n", "n = 16\nsize = 4\n");
    let config = write_config(dir.path(), &text);
    let o = run_into("sinogram", &config, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 11") && err.contains("size"), "{err}");
}

#[test]
fn route_flag_is_rejected_outside_normal_op() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let o = geotomo(&[
        "sinogram",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--route",
        "kernel",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn jet_recover_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/conformal-pair.toml");
    let out = dir.path().join("jets");
    let o = run_into("jet-recover", &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("jets.csv")).unwrap();
    assert_eq!(
        csv.lines().count(),
        1 + 2 * 16,
        "header plus one row per base point and order"
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("jets.json")).unwrap()).unwrap();
    let errs = report["relative_error"].as_array().expect("oracle errors");
    assert!(errs[0].as_f64().unwrap() <= 0.05);
    assert!(errs[1].as_f64().unwrap() <= 0.15);
}
