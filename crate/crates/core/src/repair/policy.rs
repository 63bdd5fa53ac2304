//! Policy update: maximise the expected return over uniform initial states
//! subject to the repaired critic accepting every retained counterexample.

use rayon::prelude::*;

use crate::cmdp::{Environment, HorizonConfig, State};
use crate::critic::{critic_input, CriticRepair};
use crate::neural::{bptt_return_grad, Network};
use crate::repair::penalty::{
    solve_l1_penalty, Constraints, PenaltyConfig, SolverError, SolverOutcome, ValueGrad,
};
use crate::repair::{RepairConfig, RepairError};
use crate::search::CounterexampleSet;
use crate::seeds;

/// Minibatch estimate of the expected return and its gradient.
pub(crate) struct ReturnObjective<'a> {
    pub env: &'a dyn Environment,
    pub template: &'a Network,
    pub cfg: HorizonConfig,
    pub minibatch: usize,
    pub bptt_max_horizon: usize,
    pub rng: seeds::Rng,
}

impl ReturnObjective<'_> {
    pub fn mean_return_and_grad(&mut self, params: &[f64]) -> Result<ValueGrad, SolverError> {
        let policy = self
            .template
            .with_params(params.to_vec())
            .map_err(|e| SolverError::Evaluation(e.to_string()))?;
        let starts: Vec<State> = (0..self.minibatch)
            .map(|_| self.env.initial_box().sample(&mut self.rng))
            .collect();
        let per_start: Vec<(f64, Vec<f64>)> = starts
            .par_iter()
            .map(|s0| bptt_return_grad(self.env, &policy, s0, &self.cfg, self.bptt_max_horizon))
            .collect::<Result<_, _>>()
            .map_err(|e| SolverError::Evaluation(e.to_string()))?;
        let n = self.minibatch as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (g, dg) in per_start {
            value += g;
            for (acc, d) in grad.iter_mut().zip(dg) {
                *acc += d;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(ValueGrad {
            value: value / n,
            grad,
        })
    }
}

/// `critic(s, π_θ(s)) - margin ≥ 0` for each constrained state `s`.
struct CriticConstraints<'a> {
    env: &'a dyn Environment,
    template: &'a Network,
    critic: &'a Network,
    states: Vec<State>,
    margin: f64,
}

impl Constraints for CriticConstraints<'_> {
    fn len(&self) -> usize {
        self.states.len()
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<ValueGrad>, SolverError> {
        let policy = self
            .template
            .with_params(params.to_vec())
            .map_err(|e| SolverError::Evaluation(e.to_string()))?;
        let bounds = self.env.action_box();
        let state_dim = self.env.state_dim();
        self.states
            .par_iter()
            .map(|s0| {
                let trace = policy
                    .trace(s0)
                    .map_err(|e| SolverError::Evaluation(e.to_string()))?;
                let mut action = trace.output.clone();
                bounds.clamp(&mut action);
                let input = critic_input(s0, &action);
                let critic_trace = self
                    .critic
                    .trace(&input)
                    .map_err(|e| SolverError::Evaluation(e.to_string()))?;
                let mut scratch = vec![0.0; self.critic.num_params()];
                let d_input = self.critic.backprop(&critic_trace, &[1.0], &mut scratch);
                let d_action: Vec<f64> = d_input[state_dim..]
                    .iter()
                    .zip(action.iter().zip(&trace.output))
                    .map(|(d, (a, raw))| if a == raw { *d } else { 0.0 })
                    .collect();
                let mut grad = vec![0.0; params.len()];
                policy.backprop(&trace, &d_action, &mut grad);
                Ok(ValueGrad {
                    value: critic_trace.output[0] - self.margin,
                    grad,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PolicyUpdate {
    pub policy: Network,
    /// The critic accepts every retained counterexample at the returned policy.
    pub feasible: bool,
    pub penalty_weight: f64,
    pub final_objective: Option<f64>,
    pub solver: SolverOutcome,
}

/// Update the policy against a critic freshly repaired for this exact policy.
///
/// The objective is the mean BPTT return over a fresh uniform minibatch of
/// initial states per solver step; the constraints require
/// `critic(s, π(s)) ≥ margin` for every retained counterexample and for every
/// extra `anchor` state.
#[allow(clippy::too_many_arguments)]
pub fn update_policy(
    env: &dyn Environment,
    policy: &Network,
    critic: &CriticRepair,
    counterexamples: &CounterexampleSet,
    anchors: &[State],
    cfg: &HorizonConfig,
    settings: &RepairConfig,
    opt: &PenaltyConfig,
) -> Result<PolicyUpdate, RepairError> {
    if critic.policy_fingerprint != policy.fingerprint() {
        return Err(RepairError::StaleCritic);
    }
    if critic
        .constrained
        .iter()
        .any(|s| !counterexamples.contains_near(s))
    {
        return Err(RepairError::CriticConstraintMismatch);
    }
    if settings.minibatch == 0 {
        return Err(RepairError::InvalidConfig("minibatch must be >= 1".into()));
    }
    let mut objective = ReturnObjective {
        env,
        template: policy,
        cfg: *cfg,
        minibatch: settings.minibatch,
        bptt_max_horizon: settings.bptt_max_horizon,
        rng: seeds::rng(opt.seed),
    };
    let mut eval = |p: &[f64]| objective.mean_return_and_grad(p);
    let constraints = CriticConstraints {
        env,
        template: policy,
        critic: &critic.critic,
        states: counterexamples
            .initial_states()
            .chain(anchors)
            .cloned()
            .collect(),
        margin: opt.constraint_margin,
    };
    let outcome = solve_l1_penalty(&mut eval, &constraints, policy.params(), opt)?;
    Ok(PolicyUpdate {
        policy: policy.with_params(outcome.params.clone())?,
        feasible: outcome.feasible,
        penalty_weight: outcome.penalty_weight,
        final_objective: outcome.history.last().map(|r| r.objective),
        solver: outcome,
    })
}
