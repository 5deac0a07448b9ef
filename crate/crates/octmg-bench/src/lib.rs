//! Experiment drivers and error metrics for the octmg solver.

pub mod experiments;
pub mod metrics;
