//! Safety-critic datasets, the regression loss and constrained critic repair.
//!
//! The critic reads a state together with an action and predicts the minimum
//! satisfaction value reached when that action is taken and the policy is
//! followed afterwards. Evaluated at `(s0, π(s0))` it approximates the
//! simulated safety value of `s0`, and it stays differentiable in the
//! policy parameters through the action input.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{
    min_satisfaction, policy_action, safety_value, simulate, CmdpError, Environment, HorizonConfig,
    State, Trajectory,
};
use crate::neural::{Fingerprint, Network, NetworkError};
use crate::repair::penalty::{
    solve_l1_penalty, ConstraintList, PenaltyConfig, SolverError, ValueGrad,
};
use crate::seeds;

/// Samples per parallel work unit when reducing the loss; fixed so the
/// summation order does not depend on the thread count.
const LOSS_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Rollout,
    CounterexampleTrajectory,
    ActionProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSample {
    pub state: State,
    pub action: Vec<f64>,
    pub target: f64,
    pub source: SampleSource,
}

impl CriticSample {
    pub fn input(&self) -> Vec<f64> {
        critic_input(&self.state, &self.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticDataset {
    pub samples: Vec<CriticSample>,
    /// Fingerprint of the policy whose rollouts produced the targets.
    pub policy_fingerprint: Fingerprint,
}

impl CriticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("critic dataset is empty")]
    EmptyDataset,
    #[error("n_rollouts must be >= 1")]
    NoRollouts,
    #[error("dataset was generated by policy {dataset}, current policy is {policy}")]
    StaleDataset {
        dataset: Fingerprint,
        policy: Fingerprint,
    },
    #[error("constrained state {state:?} is not a counterexample under the current policy (safety value {value})")]
    NotACounterexample { state: State, value: f64 },
    #[error("retained trajectory from {state:?} is not unsafe")]
    SafeRetainedTrajectory { state: State },
    #[error("simulation from {state:?} failed: {source}")]
    Simulation {
        state: State,
        #[source]
        source: CmdpError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    state.iter().chain(action).copied().collect()
}

/// `targets[t] = min_{k ≥ t} values[k]`.
pub fn suffix_min_targets(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for t in (0..out.len().saturating_sub(1)).rev() {
        out[t] = out[t].min(out[t + 1]);
    }
    out
}

fn rollout_samples(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    s0: &[f64],
) -> Result<Vec<CriticSample>, CriticError> {
    let wrap = |source: CmdpError| CriticError::Simulation {
        state: s0.to_vec(),
        source,
    };
    let traj = simulate(env, policy, s0, cfg).map_err(wrap)?;
    let targets = suffix_min_targets(&traj.satisfaction_values(env));
    let last = traj.states.last().expect("non-empty trajectory");
    let final_action = policy_action(env, policy, last).map_err(wrap)?;
    Ok(traj
        .states
        .iter()
        .zip(traj.actions.iter().chain(std::iter::once(&final_action)))
        .zip(targets)
        .map(|((state, action), target)| CriticSample {
            state: state.clone(),
            action: action.clone(),
            target,
            source: SampleSource::Rollout,
        })
        .collect())
}

fn recorded_samples(
    env: &dyn Environment,
    traj: &Trajectory,
) -> Result<Vec<CriticSample>, CriticError> {
    let targets = suffix_min_targets(&traj.satisfaction_values(env));
    if !(targets.first().copied().unwrap_or(0.0) < 0.0) {
        return Err(CriticError::SafeRetainedTrajectory {
            state: traj.initial_state().to_vec(),
        });
    }
    Ok(traj
        .states
        .iter()
        .zip(&traj.actions)
        .zip(targets)
        .map(|((state, action), target)| CriticSample {
            state: state.clone(),
            action: action.clone(),
            target,
            source: SampleSource::CounterexampleTrajectory,
        })
        .collect())
}

/// What goes into a critic dataset besides the fresh rollouts.
#[derive(Debug, Clone, Copy)]
pub struct DatasetPlan<'a> {
    /// Rollouts from uniformly drawn initial states.
    pub n_rollouts: usize,
    /// States rolled out under the current policy.
    pub replay: &'a [State],
    /// Recorded unsafe trajectories kept with their original actions and labels.
    pub retained: &'a [Trajectory],
    /// Uniformly drawn first actions tried at every replayed state, each
    /// followed by the current policy.
    pub action_probes: usize,
}

impl<'a> DatasetPlan<'a> {
    pub fn rollouts(n_rollouts: usize) -> Self {
        Self {
            n_rollouts,
            replay: &[],
            retained: &[],
            action_probes: 0,
        }
    }
}

/// Label for taking `action` at `s0` and following `policy` afterwards.
fn probe_sample(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    s0: &[f64],
    action: Vec<f64>,
) -> Result<CriticSample, CriticError> {
    let next = env.transition(s0, &action);
    let mut target = env.satisfaction(s0);
    if cfg.horizon > 1 {
        let rest = HorizonConfig {
            horizon: cfg.horizon - 1,
            discount: cfg.discount,
        };
        let traj =
            simulate(env, policy, &next, &rest).map_err(|source| CriticError::Simulation {
                state: s0.to_vec(),
                source,
            })?;
        target = target.min(min_satisfaction(env, &traj));
    } else {
        target = target.min(env.satisfaction(&next));
    }
    Ok(CriticSample {
        state: s0.to_vec(),
        action,
        target,
        source: SampleSource::ActionProbe,
    })
}

/// Build a critic dataset under the current policy.
///
/// * `n_rollouts` fresh rollouts from uniform initial states;
/// * every replay state rolled out under the current policy;
/// * every retained unsafe trajectory kept with its recorded actions and
///   labels, and its initial state replayed under the current policy;
/// * `action_probes` random first actions at each replay state.
///
/// Each visited state is labelled with the suffix minimum of the satisfaction
/// values over the remainder of its trajectory.
pub fn collect_dataset(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    plan: &DatasetPlan<'_>,
    seed: u64,
) -> Result<CriticDataset, CriticError> {
    if plan.n_rollouts == 0 {
        return Err(CriticError::NoRollouts);
    }
    let mut rng = seeds::rng(seed);
    let mut starts: Vec<State> = (0..plan.n_rollouts)
        .map(|_| env.initial_box().sample(&mut rng))
        .collect();
    starts.extend(plan.replay.iter().cloned());
    starts.extend(plan.retained.iter().map(|t| t.initial_state().to_vec()));
    let probes: Vec<(State, Vec<f64>)> = plan
        .replay
        .iter()
        .flat_map(|s0| std::iter::repeat(s0).take(plan.action_probes))
        .map(|s0| (s0.clone(), env.action_box().sample(&mut rng)))
        .collect();

    let per_start: Vec<Vec<CriticSample>> = starts
        .par_iter()
        .map(|s0| rollout_samples(env, policy, cfg, s0))
        .collect::<Result<_, _>>()?;
    let mut samples: Vec<CriticSample> = per_start.into_iter().flatten().collect();
    for traj in plan.retained {
        samples.extend(recorded_samples(env, traj)?);
    }
    let probed: Vec<CriticSample> = probes
        .into_par_iter()
        .map(|(s0, action)| probe_sample(env, policy, cfg, &s0, action))
        .collect::<Result<_, _>>()?;
    samples.extend(probed);
    Ok(CriticDataset {
        samples,
        policy_fingerprint: policy.fingerprint(),
    })
}

/// Mean squared error of the critic against the dataset targets.
pub fn critic_loss(critic: &Network, dataset: &CriticDataset) -> Result<f64, CriticError> {
    Ok(critic_loss_and_grad(critic, dataset)?.0)
}

pub fn critic_loss_and_grad(
    critic: &Network,
    dataset: &CriticDataset,
) -> Result<(f64, Vec<f64>), CriticError> {
    let all: Vec<&CriticSample> = dataset.samples.iter().collect();
    loss_and_grad_on(critic, &all)
}

fn loss_and_grad_on(
    critic: &Network,
    samples: &[&CriticSample],
) -> Result<(f64, Vec<f64>), CriticError> {
    if samples.is_empty() {
        return Err(CriticError::EmptyDataset);
    }
    let partials: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(LOSS_CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; critic.num_params()];
            for sample in chunk {
                let trace = critic.trace(&sample.input())?;
                let err = trace.output[0] - sample.target;
                loss += err * err;
                critic.backprop(&trace, &[2.0 * err], &mut grad);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_, NetworkError>>()?;
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; critic.num_params()];
    for (l, g) in partials {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Result of [`repair_critic`].
#[derive(Debug, Clone)]
pub struct CriticRepair {
    pub critic: Network,
    /// Every constraint `critic(s0, π(s0)) ≤ -margin` holds.
    pub feasible: bool,
    /// Constrained states whose constraint is still violated.
    pub unsatisfied: Vec<State>,
    pub constrained: Vec<State>,
    /// Largest critic value over the constrained states.
    pub max_constrained_value: Option<f64>,
    pub loss: f64,
    pub penalty_weight: f64,
    /// The policy the critic was repaired against.
    pub policy_fingerprint: Fingerprint,
}

/// Fit the critic to the dataset subject to `critic(s0, π(s0)) ≤ -margin`
/// for every constrained counterexample `s0`.
///
/// Every constrained state must be a genuine counterexample under `policy`
/// and the dataset must have been generated by `policy`. With `batch_size`
/// below the dataset size each solver step regresses on a fresh sample of
/// that many points drawn from `opt.seed`; the constraints are always exact.
#[allow(clippy::too_many_arguments)]
pub fn repair_critic(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    critic: &Network,
    dataset: &CriticDataset,
    constrained: &[State],
    opt: &PenaltyConfig,
    batch_size: usize,
) -> Result<CriticRepair, CriticError> {
    if dataset.is_empty() {
        return Err(CriticError::EmptyDataset);
    }
    let policy_fingerprint = policy.fingerprint();
    if dataset.policy_fingerprint != policy_fingerprint {
        return Err(CriticError::StaleDataset {
            dataset: dataset.policy_fingerprint.clone(),
            policy: policy_fingerprint,
        });
    }
    let mut inputs = Vec::with_capacity(constrained.len());
    for s0 in constrained {
        let wrap = |source: CmdpError| CriticError::Simulation {
            state: s0.clone(),
            source,
        };
        let value = safety_value(env, policy, s0, cfg).map_err(wrap)?;
        if !(value < 0.0) {
            return Err(CriticError::NotACounterexample {
                state: s0.clone(),
                value,
            });
        }
        inputs.push(critic_input(
            s0,
            &policy_action(env, policy, s0).map_err(wrap)?,
        ));
    }

    let margin = opt.constraint_margin;
    let all: Vec<&CriticSample> = dataset.samples.iter().collect();
    let mut rng = seeds::rng(opt.seed);
    let mut objective = |params: &[f64]| -> Result<ValueGrad, SolverError> {
        let net = critic
            .with_params(params.to_vec())
            .map_err(|e| SolverError::Evaluation(e.to_string()))?;
        let batch: Vec<&CriticSample> = if batch_size == 0 || batch_size >= all.len() {
            all.clone()
        } else {
            index::sample(&mut rng, all.len(), batch_size)
                .into_iter()
                .map(|i| all[i])
                .collect()
        };
        let (loss, grad) =
            loss_and_grad_on(&net, &batch).map_err(|e| SolverError::Evaluation(e.to_string()))?;
        Ok(ValueGrad {
            value: -loss,
            grad: grad.into_iter().map(|g| -g).collect(),
        })
    };
    let constraints = ConstraintList(
        inputs
            .iter()
            .map(|input| {
                Box::new(move |params: &[f64]| -> Result<ValueGrad, SolverError> {
                    let net = critic
                        .with_params(params.to_vec())
                        .map_err(|e| SolverError::Evaluation(e.to_string()))?;
                    let trace = net
                        .trace(input)
                        .map_err(|e| SolverError::Evaluation(e.to_string()))?;
                    let mut grad = vec![0.0; net.num_params()];
                    net.backprop(&trace, &[-1.0], &mut grad);
                    Ok(ValueGrad {
                        value: -margin - trace.output[0],
                        grad,
                    })
                }) as Box<dyn Fn(&[f64]) -> Result<ValueGrad, SolverError> + Sync>
            })
            .collect(),
    );
    let outcome = solve_l1_penalty(&mut objective, &constraints, critic.params(), opt)?;
    let repaired = critic.with_params(outcome.params)?;

    let mut unsatisfied = Vec::new();
    let mut max_value: Option<f64> = None;
    for (s0, input) in constrained.iter().zip(&inputs) {
        let q = repaired.forward(input)?[0];
        max_value = Some(max_value.map_or(q, |m| m.max(q)));
        if q > -margin {
            unsatisfied.push(s0.clone());
        }
    }
    let loss = critic_loss(&repaired, dataset)?;
    Ok(CriticRepair {
        critic: repaired,
        feasible: unsatisfied.is_empty(),
        unsatisfied,
        constrained: constrained.to_vec(),
        max_constrained_value: max_value,
        loss,
        penalty_weight: outcome.penalty_weight,
        policy_fingerprint,
    })
}
