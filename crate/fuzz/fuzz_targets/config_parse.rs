#![no_main]

use libfuzzer_sys::fuzz_target;
use sdde_lab::{validate_config, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_json(text) else { return };
    let _ = validate_config(&cfg);
    let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(cfg.digest(), again.digest());
});
