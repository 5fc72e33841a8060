//! Experiment driver (placeholder while the engine stabilizes).
