#![no_main]

use engage_core::engagement::SvmModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = SvmModel::from_json(text) {
            if model.dim <= 4096 {
                let _ = model.decision_value(&vec![0.5; model.dim]);
            }
        }
    }
});
