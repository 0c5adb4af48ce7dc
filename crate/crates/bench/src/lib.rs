//! Criterion benchmarks for the harvest engine live in `benches/`.
