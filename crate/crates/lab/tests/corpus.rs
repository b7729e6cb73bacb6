//! The checked-in fuzz seeds must stay valid inputs.

use std::fs;
use std::path::{Path, PathBuf};

use sdde_core::SamplePath;
use sdde_lab::{validate_config, ExperimentConfig};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds for {target}");
    v
}

#[test]
fn config_seeds_validate() {
    for p in seeds("config_parse") {
        let cfg = ExperimentConfig::from_json(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(validate_config(&cfg), vec![], "{}", p.display());
    }
}

#[test]
fn csv_seeds_round_trip() {
    for p in seeds("path_csv") {
        let text = fs::read_to_string(&p).unwrap();
        let path = SamplePath::from_csv(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(path.to_csv_string(), text, "{}", p.display());
    }
}

fn numeric_leaves(v: &serde_json::Value, at: String, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Number(_) => out.push(at),
        serde_json::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                numeric_leaves(x, format!("{at}/{i}"), out);
            }
        }
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                numeric_leaves(x, format!("{at}/{k}"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn extreme_numbers_never_panic_validation() {
    let extremes = [
        serde_json::json!(0),
        serde_json::json!(-1),
        serde_json::json!(0.3),
        serde_json::json!(1e-300),
        serde_json::json!(1e300),
        serde_json::json!(4294967296u64),
        serde_json::json!(u64::MAX),
    ];
    let mut checked = 0;
    for p in seeds("config_parse") {
        let base: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        let mut leaves = Vec::new();
        numeric_leaves(&base, String::new(), &mut leaves);
        for leaf in &leaves {
            for x in &extremes {
                let mut v = base.clone();
                *v.pointer_mut(leaf).unwrap() = x.clone();
                if let Ok(cfg) = ExperimentConfig::from_json(&v.to_string()) {
                    let _ = validate_config(&cfg);
                    let _ = cfg.digest();
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100);
}
