#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::config::{self, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.topology.spec();
        let _ = cfg.pipeline().validate();
        if let Ok(written) = config::to_toml(&cfg) {
            assert_eq!(RunConfig::parse(&written).expect("written config parses"), cfg);
        }
    }
});
