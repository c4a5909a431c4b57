//! Criterion benchmarks for the hot paths of `cdp-core`; see `benches/`.
