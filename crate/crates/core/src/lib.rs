//! Decentralized gradient descent (DGD) and proximal DGD over undirected
//! networks, with the descent, consensus, and rate diagnostics needed to
//! check the supporting theory on concrete runs.
//!
//! The crate is organized around the pipeline of a single experiment:
//! a [`network::MixingSpec`] validated against the mixing-matrix
//! assumptions, per-agent [`objectives`] and optional [`regularizers`],
//! a [`schedules::StepSchedule`], the [`engine`] that iterates
//! `x⁺ = prox(Wx − α∇f(x))` while recording a trace, and [`diagnostics`]
//! that audit the recorded inequalities and fit empirical rates.

pub mod diagnostics;
pub mod engine;
pub mod linalg;
pub mod network;
pub mod objectives;
pub mod regularizers;
pub mod schedules;

pub use engine::{ProblemSpec, RunTrace, StopRule};
pub use network::{Graph, MixingSpec};
pub use objectives::StackedObjective;
pub use regularizers::Regularizer;
pub use schedules::StepSchedule;
