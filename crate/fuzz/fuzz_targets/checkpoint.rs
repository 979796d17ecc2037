#![no_main]

use libfuzzer_sys::fuzz_target;
use tfn_tensor::checkpoint::decode;

// Input: manifest JSON, a NUL byte, then the raw payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else { return };
    let bin = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(tensors) = decode(manifest, bin) {
        let total: usize = tensors.iter().map(|(_, t)| 4 * t.numel()).sum();
        assert_eq!(total, bin.len());
    }
});
