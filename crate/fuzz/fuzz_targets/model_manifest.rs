#![no_main]

use libfuzzer_sys::fuzz_target;
use tfn_core::model::ModelManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ModelManifest::parse(text, "fuzz");
    }
});
