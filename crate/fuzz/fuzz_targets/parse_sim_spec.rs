#![no_main]
use libfuzzer_sys::fuzz_target;
use lincde::simdata::{generate, SimSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SimSpec::from_json(s) {
        // keep generation cheap
        if spec.n * spec.d.max(1) <= 10_000 {
            let _ = generate(&spec);
        }
    }
});
