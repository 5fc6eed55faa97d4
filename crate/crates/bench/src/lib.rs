//! Criterion benchmarks for `miae-core` live in `benches/`.
