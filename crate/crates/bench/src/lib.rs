//! Criterion benchmarks for the solvers live in `benches/`; run them with
//! `cargo bench -p rwhec-bench`.
