#![no_main]

use engage_core::tracker::{parse_tracks, write_tracks};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, tracks)) = parse_tracks(data) {
        let mut buf = Vec::new();
        write_tracks(&meta, &tracks, &mut buf).unwrap();
        let (meta2, tracks2) = parse_tracks(buf.as_slice()).expect("re-parse");
        assert_eq!(meta2, meta);
        assert_eq!(tracks2, tracks);
    }
});
