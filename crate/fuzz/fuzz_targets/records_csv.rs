#![no_main]

use circews_core::catalog::VariableCatalog;
use circews_core::records::read_records;
use libfuzzer_sys::fuzz_target;

const CATALOG: &str = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight
hr,Heart rate,continuous,0,300,80,high,,,
a_lac,Lactate,continuous,0,30,1,low,,,
norepi,Norepinephrine,drug,0,10,0,high,60,,
";

fuzz_target!(|data: &[u8]| {
    let cat = VariableCatalog::from_reader(CATALOG.as_bytes(), "catalog").unwrap();
    if let Ok(stream) = read_records(data, "fuzz", &cat) {
        assert!(stream.record_count() + stream.dropped_unknown <= stream.total_read);
    }
});
