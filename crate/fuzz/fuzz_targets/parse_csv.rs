#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = lincde::data::read_csv(data, "y", false) {
        assert!(ds.cols.iter().all(|c| c.len() == ds.n()));
        assert!(ds.cols.iter().flatten().all(|v| v.is_finite()));
    }
});
