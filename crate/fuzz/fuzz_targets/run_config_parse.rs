#![no_main]

use libfuzzer_sys::fuzz_target;
use tvlars::harness::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text) {
            assert!(cfg.validate().is_ok());
            let _ = cfg.gamma_target();
        }
    }
});
