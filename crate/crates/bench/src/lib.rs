//! Criterion benchmarks for the metrics and the scripted pipeline live in `benches/`.
