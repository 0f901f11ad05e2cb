use std::path::Path;
use std::process::{Command, Output};

fn segfb(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_segfb"));
    c.args(args).env_remove("SEGFB_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("segfb runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let k = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|row| row.unwrap()[k].parse().unwrap()).collect()
}

const FREQUENCY: &str = r#"{
  "command": "frequency",
  "grid": { "n": 2, "z_max": 1.0, "h": 0.015625 },
  "input": { "kind": "exact" },
  "frequency": { "radii": [0.1, 0.2, 0.3, 0.4, 0.5] }
}"#;

#[test]
fn frequency_of_the_exact_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.json", FREQUENCY);
    let out = dir.path().join("out");
    let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = column(&out.join("frequency.csv"), "N");
    assert_eq!(n.len(), 5);
    assert!(n.iter().all(|v| (0.49..=0.51).contains(v)), "{n:?}");
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "frequency");
    assert_eq!(m["config"]["frequency"]["radii"].as_array().unwrap().len(), 5);
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

const SOLVE_CLASSIFY: &str = r#"{
  "command": "classify",
  "grid": { "n": 2, "z_max": 1.0, "h": 0.0625 },
  "input": { "kind": "solve", "profile": { "cubic": 0.1, "shift": 0.05 } },
  "classify": { "radii": [0.25, 0.375, 0.5], "window": 0.25 }
}"#;

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SOLVE_CLASSIFY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = segfb(&["--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "3"], &[]);
    let ob = segfb(&["--config", &cfg, "--out", b.to_str().unwrap()], &[("SEGFB_THREADS", "2")]);
    assert!(oa.status.success() && ob.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    for f in ["interface.csv", "classification.csv", "energy.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let threads = |d: &Path| {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["threads"].as_u64().unwrap()
    };
    assert_eq!(threads(&a), 3);
    assert_eq!(threads(&b), 2);
}

#[test]
fn malformed_configs_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("syntax.json", "{ \"command\": "),
        ("unknown.json", r#"{ "command": "frequency", "colour": 1 }"#),
        ("nested.json", r#"{ "command": "frequency", "frequency": { "radius": [0.1] } }"#),
        ("grid.json", r#"{ "command": "frequency", "grid": { "h": 0.3 } }"#),
        ("command.json", r#"{ "command": "sovle" }"#),
        ("field.json", r#"{ "command": "frequency", "input": { "kind": "field", "path": "missing.sfld" } }"#),
    ];
    for (name, body) in cases {
        let cfg = write(dir.path(), name, body);
        let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{name} left outputs");
    }
    let cfg = write(dir.path(), "ok.json", FREQUENCY);
    let o = segfb(&["--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2), "missing output directory");
    let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap(), "--h", "-1"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn precondition_and_convergence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // radius below four cells
    let cfg = write(
        dir.path(),
        "pre.json",
        r#"{ "command": "frequency", "grid": { "h": 0.125 }, "frequency": { "radii": [0.25, 0.4] } }"#,
    );
    let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
    let cfg = write(
        dir.path(),
        "slow.json",
        r#"{ "command": "solve", "grid": { "h": 0.0625 }, "input": { "kind": "solve" },
             "solver": { "max_sweeps": 3, "beta_schedule": [] } }"#,
    );
    let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn solve_writes_a_readable_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "solve.json",
        r#"{ "command": "solve", "grid": { "h": 0.0625 }, "input": { "kind": "solve" } }"#,
    );
    let o = segfb(&["--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let u = segfb_core::io::read_field(&out.join("field.sfld")).unwrap();
    assert_eq!(u.k(), 2);
    assert_eq!(u.segregation_violations(1e-8), 0);
    // the field feeds back in as input
    let field = out.join("field.sfld");
    let body = format!(
        r#"{{ "command": "frequency", "grid": {{ "h": 0.0625 }}, "input": {{ "kind": "field", "path": {:?} }},
             "frequency": {{ "radii": [0.25, 0.375, 0.5] }} }}"#,
        field.to_str().unwrap()
    );
    let cfg = write(dir.path(), "freq.json", &body);
    let o = segfb(&["--config", &cfg, "--out", dir.path().join("f").to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = column(&dir.path().join("f").join("frequency.csv"), "N");
    assert!(n.iter().all(|v| (v - 0.5).abs() < 0.05), "{n:?}");
}
