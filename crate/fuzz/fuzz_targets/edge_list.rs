#![no_main]

use libfuzzer_sys::fuzz_target;
use topoleak::topology::{self, aggregation_matrix};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = topology::load_topology(text) {
        let back = topology::load_topology(&t.to_edge_list()).expect("written edge list parses");
        assert_eq!(back, t);
        aggregation_matrix(&t.adjacency()).expect("loaded topologies aggregate");
    }
});
