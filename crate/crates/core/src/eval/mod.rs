//! Accuracy studies, the misspecification study, and timing benchmarks.

pub mod bench;
pub mod design;
pub mod metrics;
pub mod misspec;
