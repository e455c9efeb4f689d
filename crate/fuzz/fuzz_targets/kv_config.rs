#![no_main]

use engage_cli::config::KvConfig;
use engage_cli::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(kv) = KvConfig::parse(text) {
            let _ = PipelineConfig::from_kv(&kv);
        }
    }
});
