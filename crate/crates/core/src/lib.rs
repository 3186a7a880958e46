//! Library for inference and life-cycle inspection-and-maintenance planning
//! of multi-component deteriorating systems: discretized deterioration models
//! as factored POMDPs, exact belief updating under hierarchical Gaussian
//! deterioration dependence, system reliability and risk-based costs, and
//! policy optimization by decentralized multi-agent actor-critic learning and
//! by heuristic grid search.

pub mod artifact;
pub mod belief;
pub mod config;
pub mod correlation;
pub mod ddmac;
pub mod discretization;
pub mod environment;
pub mod error;
pub mod exec;
pub mod heuristics;
pub mod nnet;
pub mod reliability;
pub mod rng;

pub use error::{Error, Result};
pub use exec::ExecMode;
