#![no_main]

use engage_core::heatmap::io::{decode_volume, encode_volume};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(volume) = decode_volume(data) {
        assert_eq!(encode_volume(&volume), data);
    }
});
