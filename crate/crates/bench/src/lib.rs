//! Criterion benchmarks for the metric sweep, loss gradients, network passes
//! and a training epoch. Run with `cargo bench -p adcf-bench`.
