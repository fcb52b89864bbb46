#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::nn;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = nn::decode_snapshot(data) {
        assert_eq!(nn::encode_snapshot(&p), data);
    }
});
