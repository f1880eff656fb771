//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p riskcal-validation --test acceptance`.
//!
//! They sit in their own package so that `cargo test --workspace` runs every
//! unit and integration test of the other crates before them.
