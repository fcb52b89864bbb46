#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::data;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = data::load_csv(text) {
        assert_eq!(data::load_csv(&d.to_csv()).expect("written dataset parses"), d);
    }
});
