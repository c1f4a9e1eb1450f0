//! Criterion benchmarks for relground; see `benches/`.
