//! Desk-scale experiments: synthetic task pairs, linear baselines that
//! produce empirical risks, and grid sweeps with correlation/consistency
//! reports.

mod sweep;
mod synthetic;
mod train;

pub use sweep::*;
pub use synthetic::*;
pub use train::*;
