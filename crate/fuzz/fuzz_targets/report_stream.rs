#![no_main]

use libfuzzer_sys::fuzz_target;
use urllc::scheduler::parse_reports;

fuzz_target!(|data: &[u8]| {
    if let Ok(reports) = parse_reports(data) {
        for r in &reports {
            assert!(r.validate().is_ok());
        }
    }
});
