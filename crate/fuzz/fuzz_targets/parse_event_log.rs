#![no_main]

use libfuzzer_sys::fuzz_target;
use patrol::harness::{parse_event_log, recompute_idleness_metrics};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lines) = parse_event_log(text) {
        let _ = recompute_idleness_metrics(&lines, 0, 0);
    }
});
