#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::attacks::{labeled_pairs_from_csv, labeled_pairs_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = labeled_pairs_from_csv(text) {
        assert_eq!(labeled_pairs_from_csv(&labeled_pairs_to_csv(&pairs)).expect("written pairs parse"), pairs);
        assert!(pairs.iter().all(|p| p.i < p.j));
    }
});
