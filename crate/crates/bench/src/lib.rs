//! Benchmark-only crate; see benches/dsp.rs.
