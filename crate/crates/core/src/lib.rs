//! Counterexample-guided repair of neural control policies with learned
//! safety critics.
//!
//! A policy is checked for initial states whose rollouts leave the safe set;
//! every confirmed counterexample is retained, a safety critic is fitted to
//! label them unsafe, and the policy is retrained for return under the
//! constraint that the critic accepts all retained counterexamples.

pub mod cli;
pub mod cmdp;
pub mod critic;
pub mod envs;
pub mod neural;
pub mod repair;
pub mod search;
pub mod seeds;

pub use cmdp::{Environment, HorizonConfig, State, Trajectory};
pub use envs::{make_env, EnvSpec};
pub use neural::Network;
