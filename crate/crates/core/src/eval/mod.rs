//! Metrics and experiment harness.
