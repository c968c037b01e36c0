#![no_main]

use libfuzzer_sys::fuzz_target;
use urllc::harness::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ExperimentSpec::from_json_str(s) {
        let json = serde_json::to_string(&spec).expect("spec serializes");
        assert_eq!(ExperimentSpec::from_json_str(&json).expect("round trip"), spec);
    }
});
