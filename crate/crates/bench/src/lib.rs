//! Criterion benchmarks for the cpn pipeline live in `benches/`.
