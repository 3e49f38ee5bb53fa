//! Criterion benchmarks for the gradient engine; see `benches/`.
