#![no_main]

use engage_core::dataset::{parse_corpus_bytes, write_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = parse_corpus_bytes(data) {
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let again = parse_corpus_bytes(&buf).expect("re-parse");
        assert_eq!(again.clips.len(), corpus.clips.len());
    }
});
