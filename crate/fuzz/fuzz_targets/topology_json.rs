#![no_main]

use libfuzzer_sys::fuzz_target;
use urllc::geometry::{ScenarioConfig, Topology};

fuzz_target!(|data: &[u8]| {
    if let Ok(topo) = serde_json::from_slice::<Topology>(data) {
        let _ = topo.audit(&ScenarioConfig::default());
        let _ = topo.counts();
    }
});
