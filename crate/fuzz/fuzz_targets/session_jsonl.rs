#![no_main]

use engage_core::ingest::{parse_session_bytes, session_to_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(session) = parse_session_bytes(data) {
        let again = parse_session_bytes(session_to_string(&session).as_bytes()).expect("re-parse");
        assert_eq!(again, session);
    }
});
