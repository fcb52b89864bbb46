//! Holds the workspace acceptance checks in `tests/acceptance.rs`; run them
//! with `cargo test -p topoleak-suite --test acceptance`.
