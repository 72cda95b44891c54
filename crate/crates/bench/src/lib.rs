//! Criterion benchmarks for trace-ppl live in `benches/`.
