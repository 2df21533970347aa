#![no_main]

use circews_core::catalog::VariableCatalog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cat) = VariableCatalog::from_reader(data, "fuzz") {
        let mut out = Vec::new();
        cat.to_writer(&mut out).unwrap();
        let again = VariableCatalog::from_reader(out.as_slice(), "fuzz").unwrap();
        assert_eq!(again.len(), cat.len());
    }
});
