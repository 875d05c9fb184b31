//! Criterion benchmarks for tracebench; see `benches/`.
