use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdde_lab::run::verify_manifest;
use sdde_lab::{validate_config, ExperimentConfig};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdde-lab"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(kind)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn brownian(kind: &str, replicates: usize) -> Value {
    json!({
        "kind": kind,
        "model": {"family": "linear"},
        "grid": {"r": 1.0, "horizon": 1.0, "h": 0.0625},
        "monte_carlo": {"replicates": replicates, "seed": 4},
        "functional": {"type": "one"}
    })
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(validate_config(&cfg), vec![], "{}", path.display());
        n += 1;
    }
    assert!(n >= 7);
}

#[test]
fn simulate_single_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = brownian("simulate", 1);
    v["model"] = json!({"family": "sgn_delay"});
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "path_00000.csv"]);
    let m = verify_manifest(&out).unwrap();
    assert!(m.complete);
    assert_eq!(m.files.len(), 1);
    let path = sdde_core::SamplePath::from_csv(&fs::read_to_string(out.join("path_00000.csv")).unwrap()).unwrap();
    assert_eq!(path.grid().n_main(), 16);
}

#[test]
fn driftless_girsanov_check_has_unit_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &brownian("girsanov-check", 50));
    let out = dir.path().join("out");
    let o = run("girsanov-check", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = read_json(&out.join("girsanov.json"));
    assert_eq!(g["estimate"].as_f64(), Some(1.0));
    assert_eq!(g["stderr"].as_f64(), Some(0.0));
    assert_eq!(g["ess"].as_f64(), Some(50.0));
    let m = read_json(&out.join("manifest.json"));
    for f in ["girsanov.json", "direct_em.json", "comparison.json"] {
        assert_eq!(read_json(&out.join(f))["config_digest"], m["config_digest"], "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let mut v = brownian("simulate", 1);
    v["grid"]["h"] = json!(0.3);
    let cfg = write_config(dir.path(), "grid.json", &v);
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.r: r not an integer multiple of h"));

    let mut v = brownian("simulate", 1);
    v["monte_carlo"]["replicate"] = json!(3);
    let cfg = write_config(dir.path(), "typo.json", &v);
    assert_eq!(run("simulate", &cfg, &out, &[]).status.code(), Some(2));

    let mut v = brownian("bounds", 10);
    v["bounds"] = json!({"alpha": 1.0});
    let cfg = write_config(dir.path(), "alpha.json", &v);
    let o = run("bounds", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha ≥ 1/(2dC_σT)"));

    let cfg = write_config(dir.path(), "kind.json", &brownian("simulate", 1));
    assert_eq!(run("bounds", &cfg, &out, &[]).status.code(), Some(2));
    assert_eq!(
        run("simulate", &dir.path().join("missing.json"), &out, &[]).status.code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_3_with_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // a narrow box: most transformed paths leave [-L, L]
    let v = json!({
        "kind": "zvonkin",
        "model": {"family": "pointwise_sign"},
        "grid": {"r": 0.25, "horizon": 0.25, "h": 0.015625},
        "monte_carlo": {"replicates": 200, "seed": 1},
        "initial": [0.5],
        "pde": {"half_width": 0.6, "dx": 0.02, "dt": 0.001953125}
    });
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    let o = run("zvonkin", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = verify_manifest(&out).unwrap();
    assert!(!m.complete);
    assert!(m.error.unwrap().contains("estimation"));
    assert!(m.files.iter().any(|f| f.path == "pde.csv"));
    assert!(!out.join("residual.json").exists());
}

#[test]
fn inconclusive_verdict_exits_4_only_with_assert() {
    let dir = tempfile::tempdir().unwrap();
    // gap of about 4 standard errors: between the continuous and gap thresholds
    let v = json!({
        "kind": "strong-feller",
        "model": {"family": "linear"},
        "grid": {"r": 1.0, "horizon": 1.0, "h": 0.0625},
        "monte_carlo": {"replicates": 10000, "seed": 9},
        "functional": {"type": "tanh_endpoint"},
        "probe": {"shifts": [0.057], "estimator": "direct"}
    });
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    assert_eq!(run("strong-feller", &cfg, &out, &[]).status.code(), Some(0));
    let p = read_json(&out.join("probe.json"));
    assert_eq!(p["verdict"], "inconclusive", "{p}");
    assert_eq!(run("strong-feller", &cfg, &out, &["--assert"]).status.code(), Some(4));
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut stab: Value = serde_json::from_str(&fs::read_to_string(configs_dir().join("kernel_stability.json")).unwrap()).unwrap();
    stab["monte_carlo"]["replicates"] = json!(300);
    let mut sf: Value = serde_json::from_str(&fs::read_to_string(configs_dir().join("sgn_strong_feller.json")).unwrap()).unwrap();
    sf["monte_carlo"]["replicates"] = json!(3000);
    let mut sim = brownian("simulate", 5);
    sim["model"] = json!({"family": "sgn_delay"});
    for (kind, v) in [("stability", stab), ("strong-feller", sf), ("simulate", sim)] {
        let cfg = write_config(dir.path(), &format!("{kind}.json"), &v);
        let a = dir.path().join(format!("{kind}-1"));
        let b = dir.path().join(format!("{kind}-8"));
        assert!(run(kind, &cfg, &a, &["--workers", "1"]).status.success());
        assert!(run(kind, &cfg, &b, &["--workers", "8"]).status.success());
        let fa = report_files(&a);
        assert!(!fa.is_empty());
        assert_eq!(fa, report_files(&b), "{kind}");
        let (ma, mb) = (verify_manifest(&a).unwrap(), verify_manifest(&b).unwrap());
        assert_eq!(ma.files, mb.files);
        assert_eq!(ma.config_digest, mb.config_digest);
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = brownian("simulate", 1);
    v["monte_carlo"]["seed"] = json!(1);
    let cfg = write_config(dir.path(), "c.json", &v);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run("simulate", &cfg, &a, &[]).status.success());
    assert!(run("simulate", &cfg, &b, &["--seed", "1"]).status.success());
    assert!(run("simulate", &cfg, &c, &["--seed", "2"]).status.success());
    assert_eq!(report_files(&a), report_files(&b));
    assert_ne!(report_files(&a), report_files(&c));
    assert_ne!(verify_manifest(&a).unwrap().config_digest, verify_manifest(&c).unwrap().config_digest);
}
