//! Deterministic rule-discovery benchmark harness.
