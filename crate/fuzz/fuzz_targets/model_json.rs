#![no_main]

use circews_core::model::model_from_json;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = model_from_json(text) {
            let row = vec![0.5; m.feature_names.len()];
            let _ = m.model.margin(&row);
        }
    }
});
