#![no_main]

use circews_core::grid::{decode_grids, encode_grids};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grids) = decode_grids(data) {
        let again = decode_grids(&encode_grids(&grids)).unwrap();
        assert_eq!(again.len(), grids.len());
    }
});
