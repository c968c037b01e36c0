#![no_main]

use libfuzzer_sys::fuzz_target;
use urllc::geometry::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_json_str(s) {
        // accepted configs must survive a round trip unchanged
        let back = ScenarioConfig::from_json_str(&cfg.to_json_string()).expect("round trip");
        assert_eq!(back, cfg);
    }
});
