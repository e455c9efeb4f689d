#![no_main]

use engage_core::features::{parse_features, write_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_features(data) {
        let mut buf = Vec::new();
        write_features(&rows, &mut buf).unwrap();
        assert_eq!(parse_features(buf.as_slice()).expect("re-parse"), rows);
    }
});
