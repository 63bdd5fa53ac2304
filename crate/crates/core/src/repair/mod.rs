//! Counterexample-guided repair of a policy together with its safety critic.
//!
//! * [`penalty`]: the ℓ1 penalty solver shared by both repair steps.
//! * [`policy`]: critic-constrained return maximisation.
//! * [`removal`]: the inner loop alternating critic repair and policy update
//!   until every retained counterexample is gone.
//! * [`outer`]: the outer loop alternating counterexample search and removal.
//! * [`baseline`]: unconstrained training used to manufacture unsafe policies.

pub mod baseline;
pub mod outer;
pub mod penalty;
pub mod policy;
pub mod removal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{CmdpError, Environment};
use crate::critic::CriticError;
use crate::neural::{
    GradientError, InputNormalization, Network, NetworkError, DEFAULT_BPTT_MAX_HORIZON,
};
use crate::search::{SearchConfig, SearchError};

pub use baseline::{train_unsafe_baseline, BaselineConfig, BaselineOutcome};
pub use outer::{
    evaluation_states, mean_return, repair, IterationMetrics, RepairReport, RepairRun,
};
pub use penalty::{solve_l1_penalty, PenaltyConfig, SolverError, SolverOutcome, ValueGrad};
pub use policy::{update_policy, PolicyUpdate};
pub use removal::{remove_counterexamples, RemovalOutcome, RemovalStatus, UnsafeArchive};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("critic was repaired against a different policy")]
    StaleCritic,
    #[error("critic constraints are not a subset of the counterexample set")]
    CriticConstraintMismatch,
    #[error("counterexample removal needs a non-empty counterexample set")]
    EmptyCounterexampleSet,
    #[error("invalid repair configuration: {0}")]
    InvalidConfig(String),
    #[error("no unsafe baseline after {attempts} attempts")]
    BaselineExhausted { attempts: usize },
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
}

/// Budgets and solver settings for the repair loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairConfig {
    /// Fresh rollouts per critic dataset.
    pub critic_rollouts: usize,
    /// Random first actions tried at each retained counterexample per dataset.
    pub action_probes: usize,
    /// Samples per critic regression step; 0 uses the whole dataset.
    pub critic_batch: usize,
    /// Initial states per return estimate in the policy update.
    pub minibatch: usize,
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    /// Keep previously recorded unsafe trajectories in the critic's training data.
    pub retain_unsafe_trajectories: bool,
    /// Also constrain the policy at the states a live counterexample's unsafe
    /// trajectory visits before its first violation.
    pub trajectory_anchors: bool,
    /// Recorded unsafe trajectories kept per counterexample (the first one is never evicted).
    pub witnesses_per_counterexample: usize,
    pub bptt_max_horizon: usize,
    /// Initial states in the fixed return-evaluation set.
    pub evaluation_states: usize,
    pub policy_solver: PenaltyConfig,
    pub critic_solver: PenaltyConfig,
    pub search: SearchConfig,
    pub seed: u64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            critic_rollouts: 64,
            action_probes: 8,
            critic_batch: 1024,
            minibatch: 64,
            max_inner_iterations: 20,
            max_outer_iterations: 50,
            retain_unsafe_trajectories: true,
            trajectory_anchors: true,
            witnesses_per_counterexample: 4,
            bptt_max_horizon: DEFAULT_BPTT_MAX_HORIZON,
            evaluation_states: 64,
            policy_solver: PenaltyConfig {
                learning_rate: 2e-3,
                inner_steps: 50,
                ..PenaltyConfig::default()
            },
            critic_solver: PenaltyConfig {
                learning_rate: 5e-2,
                inner_steps: 100,
                ..PenaltyConfig::default()
            },
            search: SearchConfig::default(),
            seed: 0,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<(), RepairError> {
        let bad = |msg: &str| Err(RepairError::InvalidConfig(msg.to_string()));
        if self.critic_rollouts == 0 {
            return bad("critic_rollouts must be >= 1");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be >= 1");
        }
        if self.max_inner_iterations == 0 {
            return bad("max_inner_iterations must be >= 1");
        }
        if self.witnesses_per_counterexample == 0 {
            return bad("witnesses_per_counterexample must be >= 1");
        }
        if self.evaluation_states == 0 {
            return bad("evaluation_states must be >= 1");
        }
        if self.policy_solver.constraint_margin != self.critic_solver.constraint_margin {
            return bad("policy and critic solvers must share the same constraint_margin");
        }
        self.policy_solver.validate()?;
        self.critic_solver.validate()?;
        Ok(())
    }
}

/// A freshly initialised squashed-output policy for `env`.
pub fn init_policy(
    env: &dyn Environment,
    hidden: &[usize],
    seed: u64,
) -> Result<Network, NetworkError> {
    let actions = env.action_box();
    Network::policy(env.state_dim(), &actions.low, &actions.high, hidden, seed)?
        .with_input_normalization(env.state_normalization())
}

/// A freshly initialised state-action critic for `env`.
pub fn init_critic(
    env: &dyn Environment,
    hidden: &[usize],
    seed: u64,
) -> Result<Network, NetworkError> {
    let actions = env.action_box();
    let norm = env
        .state_normalization()
        .concat(&InputNormalization::for_box(&actions.low, &actions.high));
    Network::critic(env.state_dim() + env.action_dim(), hidden, seed)?
        .with_input_normalization(norm)
}
