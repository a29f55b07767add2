//! Criterion benchmarks for the simulation and predictor hot paths; run
//! them with `cargo bench -p ringflow-bench`.
