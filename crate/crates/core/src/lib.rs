//! Transferability estimation with Wasserstein distances.
//!
//! The crate computes an upper bound on the target risk of a transferred
//! model from the source risk, the feature-space distance between domains,
//! and the label-space distance between tasks. Subtracting the risk of a
//! target-only model gives a signed score: negative means transfer is
//! expected to help.
//!
//! Modules, bottom-up:
//!
//! - [`measures`]: datasets, empirical measures, label encodings, file IO
//! - [`ot`]: exact, entropic and 1-D transport solvers
//! - [`bound`]: Lipschitz recipes and assembly of the risk bound
//! - [`decision`]: scores, transfer decisions, confusion matrix, consistency index
//! - [`baselines`]: LEEP, NCE, LogME, H-score and Pearson correlation
//! - [`harness`]: synthetic tasks, linear baselines, parameter sweeps, reports

pub mod baselines;
pub mod bound;
pub mod decision;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod measures;
pub mod ot;
pub mod par;

pub use error::{Error, Result};
