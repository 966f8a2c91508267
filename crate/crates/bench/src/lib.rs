//! Criterion benchmarks for harm-core live under `benches/`.
