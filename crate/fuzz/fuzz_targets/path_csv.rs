#![no_main]

use libfuzzer_sys::fuzz_target;
use sdde_core::SamplePath;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(path) = SamplePath::from_csv(text) {
        let again = SamplePath::from_csv(&path.to_csv_string()).unwrap();
        assert_eq!(path, again);
    }
});
