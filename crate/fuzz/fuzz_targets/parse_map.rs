#![no_main]

use libfuzzer_sys::fuzz_target;
use patrol::map::parse_map;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_map(text) {
        // Anything accepted must survive a render round trip.
        let again = parse_map(&map.render()).expect("rendered map parses");
        assert_eq!(again, map);
    }
});
