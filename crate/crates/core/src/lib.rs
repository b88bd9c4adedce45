//! Kullback–Leibler robust satisficing (KL-RS).
//!
//! Given a loss target `tau`, KL-RS looks for model parameters and the smallest
//! fragility `lambda` such that the expected loss under any distribution `P`
//! stays below `tau + lambda * KL(P || P_hat)`. The worst case over `P` has the
//! closed form `lambda * log E[exp(loss / lambda)]` (the tilted risk), which is
//! what everything in this crate is built around:
//!
//! * [`tilt`]: stable tilted risk, surrogate, worst-case weights, KL divergence.
//! * [`models`]: loss models with analytic gradients, datasets.
//! * [`linalg`]: the small dense kernels the PCA experiments need.
//! * [`solver`]: feasibility oracle by SGD on the normalized surrogate and the
//!   doubling/bisection search on `lambda`, plus ERM and TERM baselines.
//! * [`hierarchical`]: two-level (group / within-group) KL-RS.
//! * [`guarantees`]: tail bounds, chi-squared confidence, finite-sample radii.
//! * [`experiments`]: generators, metrics and harnesses for the desk-scale
//!   experiments.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` is the NaN-rejecting form used for every parameter check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub mod experiments;
pub mod guarantees;
pub mod hierarchical;
pub mod linalg;
pub mod models;
mod rng;
pub mod solver;
pub mod tilt;

pub use error::{Error, Result};
pub use hierarchical::{GroupedDataset, HierConfig, HierSolveResult};
pub use models::{Dataset, Labels, LossModel, ParameterVector};
pub use solver::{SolveResult, SolverConfig, StepSchedule, TraceEntry};
pub use tilt::{DiscreteDistribution, LossVector, TiltConfig};
