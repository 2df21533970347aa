#![no_main]

use circews_core::alarm::scores::{read_scores, write_scores};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_scores(data, "fuzz") {
        let mut out = Vec::new();
        write_scores(&mut out, &rows).unwrap();
        assert_eq!(read_scores(out.as_slice(), "again").unwrap(), rows);
    }
});
