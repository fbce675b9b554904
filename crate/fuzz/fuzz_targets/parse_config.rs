#![no_main]
use libfuzzer_sys::fuzz_target;
use lincde::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml(s) {
            cfg.boost_config().expect("validated config converts");
        }
    }
});
