#![no_main]

use circews_core::features::matrix::{decode_matrix, encode_matrix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_matrix(data) {
        let again = decode_matrix(&encode_matrix(&m)).unwrap();
        assert_eq!(again.n_rows(), m.n_rows());
        assert_eq!(again.n_cols(), m.n_cols());
    }
});
