#![no_main]

use circews_core::records::{read_statics, write_statics};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_statics(data, "fuzz") {
        let mut out = Vec::new();
        write_statics(&mut out, rows.iter()).unwrap();
        assert_eq!(read_statics(out.as_slice(), "again").unwrap().len(), rows.len());
    }
});
