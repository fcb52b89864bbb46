#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::attacks::SoftAdjacency;
use topoleak::matrix::Matrix;
use topoleak::metrics::FeatureMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Matrix::from_csv(text) {
        let back = Matrix::from_csv(&m.to_csv()).expect("written matrix parses");
        assert_eq!(back.max_abs_diff(&m), 0.0);
    }
    let _ = FeatureMatrix::from_csv(text, None);
    if let Ok(s) = SoftAdjacency::from_csv(text) {
        let n = s.n_nodes();
        for i in 0..n {
            for j in 0..n {
                assert!((0.0..=1.0).contains(&s.get(i, j)));
            }
        }
    }
});
