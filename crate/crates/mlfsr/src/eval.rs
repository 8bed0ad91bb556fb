//! Evaluation and benchmarking.
