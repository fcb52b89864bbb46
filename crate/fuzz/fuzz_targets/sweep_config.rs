#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::config::SweepConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SweepConfig::parse(text) {
        if cfg.validate().is_ok() {
            let _ = cfg.cells();
        }
    }
});
