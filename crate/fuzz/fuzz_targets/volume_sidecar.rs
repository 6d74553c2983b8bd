#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::volume::{clip_normalize, decode_volume, NormalizeParams, Sidecar};

fuzz_target!(|data: &[u8]| {
    // First line is the sidecar JSON, the rest is the raw voxel payload.
    let split = data.iter().position(|&b| b == b'\n').unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let Ok(sidecar) = Sidecar::parse(text) else {
        return;
    };
    let raw = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(v) = decode_volume(raw, &sidecar) {
        let _ = clip_normalize(&v, &NormalizeParams::default());
    }
});
