//! Benchmark crate; see benches/core.rs.
