//! Criterion benchmarks for the edge data path; see `benches/`.
