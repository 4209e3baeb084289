//! Criterion benchmarks for nrss-core live under `benches/`.
