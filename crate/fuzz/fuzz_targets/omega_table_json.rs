#![no_main]

use libfuzzer_sys::fuzz_target;
use urllc::pathloss::{OmegaEntry, OmegaTable};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(t) = OmegaTable::from_json_str(s) {
        assert!(OmegaEntry::ALL.iter().all(|&e| t.get(e).is_finite() && t.get(e) > 0.0));
    }
});
