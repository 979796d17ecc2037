#![no_main]

use libfuzzer_sys::fuzz_target;
use tfn_core::data::parse_tracks;
use tfn_core::data::track::format_tracks;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_tracks(text, "fuzz") {
        // whatever parses must survive a write and re-read unchanged
        let again = parse_tracks(&format_tracks(&set), "fuzz").expect("formatted tracks parse");
        assert_eq!(format_tracks(&again), format_tracks(&set));
    }
});
