#![no_main]

use libfuzzer_sys::fuzz_target;
use tfn_core::model::Variant;
use tfn_core::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = TrainConfig::desk(Variant::Small);
    if cfg.apply_kv(text).is_ok() && cfg.validate().is_ok() {
        // a valid configuration written back out reads to the same values
        let mut again = TrainConfig::desk(Variant::Small);
        again.apply_kv(&cfg.to_kv()).expect("serialized config parses");
        assert_eq!(again.to_kv(), cfg.to_kv());
    }
});
