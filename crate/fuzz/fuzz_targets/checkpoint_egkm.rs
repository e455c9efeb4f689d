#![no_main]

use engage_core::net3d::checkpoint::{decode_entries, decode_model, encode_model};
use engage_core::net3d::Net;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_entries(data);
    if let Ok(net) = decode_model::<f32>(data) {
        let again: Net<f32> = decode_model(&encode_model(&net)).expect("re-decode");
        assert_eq!(again, net);
    }
});
