#![no_main]

use circews_core::endpoint::{read_events, write_events};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = read_events(data, "fuzz") {
        let mut out = Vec::new();
        write_events(&mut out, &events).unwrap();
        assert_eq!(read_events(out.as_slice(), "again").unwrap(), events);
    }
});
