//! Deterministic constrained MDPs: the environment abstraction, rollouts,
//! discounted return, trajectory safety and the simulated safety value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{InputNormalization, Network, NetworkError};

/// A numeric state representation.
pub type State = Vec<f64>;

/// Axis-aligned box `[low, high]` used for action sets and initial-state sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl BoxSet {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.low.iter().zip(&self.high)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Uniform sample; degenerate axes (`low == high`) return the bound.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(lo, hi)| {
                if hi > lo {
                    lo + (hi - lo) * rng.gen::<f64>()
                } else {
                    *lo
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub horizon: usize,
    pub discount: f64,
}

impl HorizonConfig {
    pub fn new(horizon: usize, discount: f64) -> Result<Self, CmdpError> {
        let cfg = Self { horizon, discount };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CmdpError> {
        if self.horizon < 1 {
            return Err(CmdpError::InvalidHorizon(self.horizon));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(CmdpError::InvalidDiscount(self.discount));
        }
        Ok(())
    }
}

/// A CMDP with deterministic, differentiable dynamics.
///
/// Jacobians are row-major: `d_state` is `state_dim x state_dim`, `d_action`
/// is `state_dim x action_dim`. The satisfaction function is non-negative
/// exactly on safe states.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_box(&self) -> &BoxSet;
    fn initial_box(&self) -> &BoxSet;
    fn default_horizon(&self) -> HorizonConfig;

    fn transition(&self, state: &[f64], action: &[f64]) -> State;
    fn transition_jacobians(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn reward(&self, state: &[f64], action: &[f64]) -> f64;
    /// Gradients of the reward with respect to state and action.
    fn reward_gradients(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn satisfaction(&self, state: &[f64]) -> f64;

    fn action_dim(&self) -> usize {
        self.action_box().dim()
    }

    /// Rescaling that brings typical states to roughly unit range before they
    /// reach a network.
    fn state_normalization(&self) -> InputNormalization {
        InputNormalization::new(vec![0.0; self.state_dim()], vec![1.0; self.state_dim()])
    }
}

/// Check the structural invariants every environment must satisfy.
pub fn validate_environment(env: &dyn Environment) -> Result<(), CmdpError> {
    let actions = env.action_box();
    let initial = env.initial_box();
    if env.state_dim() == 0
        || initial.dim() != env.state_dim()
        || initial.high.len() != initial.dim()
    {
        return Err(CmdpError::InvalidEnvironment(format!(
            "initial box has dimension {} but state dimension is {}",
            initial.dim(),
            env.state_dim()
        )));
    }
    if actions.dim() == 0 || actions.high.len() != actions.dim() {
        return Err(CmdpError::InvalidEnvironment("empty action box".into()));
    }
    if actions
        .low
        .iter()
        .zip(&actions.high)
        .any(|(lo, hi)| !(lo < hi))
    {
        return Err(CmdpError::InvalidEnvironment(
            "action bounds must satisfy low < high componentwise".into(),
        ));
    }
    if initial
        .low
        .iter()
        .zip(&initial.high)
        .any(|(lo, hi)| !(lo <= hi))
    {
        return Err(CmdpError::InvalidEnvironment(
            "initial bounds must satisfy low <= high componentwise".into(),
        ));
    }
    Ok(())
}

/// Alternating state/action sequence: `states.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn is_well_formed(&self) -> bool {
        !self.states.is_empty() && self.states.len() == self.actions.len() + 1
    }

    pub fn satisfaction_values(&self, env: &dyn Environment) -> Vec<f64> {
        self.states.iter().map(|s| env.satisfaction(s)).collect()
    }

    /// True when every recorded transition agrees with the environment dynamics.
    pub fn replays(&self, env: &dyn Environment) -> bool {
        self.is_well_formed()
            && self
                .actions
                .iter()
                .enumerate()
                .all(|(t, a)| env.transition(&self.states[t], a) == self.states[t + 1])
    }
}

#[derive(Debug, Error)]
pub enum CmdpError {
    #[error("horizon must be >= 1, got {0}")]
    InvalidHorizon(usize),
    #[error("discount must lie in [0, 1], got {0}")]
    InvalidDiscount(f64),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("policy maps {policy_in} -> {policy_out} but environment expects {state_dim} -> {action_dim}")]
    PolicyShape {
        policy_in: usize,
        policy_out: usize,
        state_dim: usize,
        action_dim: usize,
    },
    #[error("initial state has dimension {found}, expected {expected}")]
    StateShape { expected: usize, found: usize },
    #[error("initial state is not finite")]
    NonFiniteInitialState,
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub(crate) fn check_policy_shape(env: &dyn Environment, policy: &Network) -> Result<(), CmdpError> {
    if policy.input_dim() != env.state_dim() || policy.output_dim() != env.action_dim() {
        return Err(CmdpError::PolicyShape {
            policy_in: policy.input_dim(),
            policy_out: policy.output_dim(),
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
        });
    }
    Ok(())
}

/// The action a policy takes in a state, clamped into the action box.
pub fn policy_action(
    env: &dyn Environment,
    policy: &Network,
    state: &[f64],
) -> Result<Vec<f64>, CmdpError> {
    let mut action = policy.forward(state)?;
    env.action_box().clamp(&mut action);
    Ok(action)
}

/// Roll out `policy` from `s0` for `cfg.horizon` steps.
pub fn simulate(
    env: &dyn Environment,
    policy: &Network,
    s0: &[f64],
    cfg: &HorizonConfig,
) -> Result<Trajectory, CmdpError> {
    cfg.validate()?;
    check_policy_shape(env, policy)?;
    if s0.len() != env.state_dim() {
        return Err(CmdpError::StateShape {
            expected: env.state_dim(),
            found: s0.len(),
        });
    }
    if s0.iter().any(|v| !v.is_finite()) {
        return Err(CmdpError::NonFiniteInitialState);
    }
    let mut states = Vec::with_capacity(cfg.horizon + 1);
    let mut actions = Vec::with_capacity(cfg.horizon);
    states.push(s0.to_vec());
    for t in 0..cfg.horizon {
        let action = policy_action(env, policy, &states[t])?;
        if action.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::Diverged { step: t });
        }
        let next = env.transition(&states[t], &action);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::Diverged { step: t + 1 });
        }
        actions.push(action);
        states.push(next);
    }
    Ok(Trajectory { states, actions })
}

/// Discounted return `sum_{t<T} discount^t * R(s_t, a_t)`.
pub fn return_of(env: &dyn Environment, traj: &Trajectory, cfg: &HorizonConfig) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for (state, action) in traj.states.iter().zip(&traj.actions) {
        total += weight * env.reward(state, action);
        weight *= cfg.discount;
    }
    total
}

/// A trajectory is safe when every state, including the first and last, is.
pub fn is_safe(env: &dyn Environment, traj: &Trajectory) -> bool {
    traj.states.iter().all(|s| env.satisfaction(s) >= 0.0)
}

/// Minimum satisfaction value along a trajectory.
pub fn min_satisfaction(env: &dyn Environment, traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .map(|s| env.satisfaction(s))
        .fold(f64::INFINITY, f64::min)
}

/// Simulated safety value: minimum satisfaction over the policy-induced
/// trajectory from `s0`. Negative exactly when `s0` leads to an unsafe state.
pub fn safety_value(
    env: &dyn Environment,
    policy: &Network,
    s0: &[f64],
    cfg: &HorizonConfig,
) -> Result<f64, CmdpError> {
    let traj = simulate(env, policy, s0, cfg)?;
    Ok(min_satisfaction(env, &traj))
}
