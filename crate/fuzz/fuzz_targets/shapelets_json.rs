#![no_main]

use circews_core::shapelets::{distance_profile, shapelets_from_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(shapelets) = shapelets_from_json(data) {
        let series: Vec<f64> = (0..64).map(|i| i as f64).collect();
        for s in shapelets.iter().filter(|s| s.span() < 1 << 16) {
            assert_eq!(distance_profile(&series, s).len(), series.len());
        }
    }
});
