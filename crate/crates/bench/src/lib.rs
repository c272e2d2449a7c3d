//! Criterion benchmarks for minerva-core; see `benches/`.
