//! Criterion benchmarks for the core routines.
