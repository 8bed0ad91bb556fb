//! Training harness.
