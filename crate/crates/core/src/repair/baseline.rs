//! Unconstrained return maximisation, used to produce the unsafe policies
//! that repair starts from.

use serde::{Deserialize, Serialize};

use crate::cmdp::{Environment, HorizonConfig};
use crate::neural::{Network, DEFAULT_BPTT_MAX_HORIZON};
use crate::repair::penalty::{solve_l1_penalty, ConstraintList, PenaltyConfig};
use crate::repair::policy::ReturnObjective;
use crate::repair::{init_policy, RepairError};
use crate::search::{falsify, verify_grid, Finding, SearchConfig, Verdict};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub solver: PenaltyConfig,
    pub minibatch: usize,
    /// Training attempts, each from a freshly seeded initialisation.
    pub max_attempts: usize,
    pub bptt_max_horizon: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            solver: PenaltyConfig {
                max_penalty_rounds: 1,
                inner_steps: 10,
                learning_rate: 5e-3,
                ..PenaltyConfig::default()
            },
            minibatch: 64,
            max_attempts: 16,
            bptt_max_horizon: DEFAULT_BPTT_MAX_HORIZON,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub policy: Network,
    /// Confirmed counterexamples: falsifier findings, then unsafe grid points.
    pub counterexamples: Vec<Finding>,
    /// 1-based index of the successful attempt.
    pub attempts: usize,
    pub mean_objective: Option<f64>,
}

/// Train a policy for return only and check that it is unsafe.
///
/// A safe result is discarded and training restarts from a new
/// initialisation with a shifted seed, up to `max_attempts` times.
pub fn train_unsafe_baseline(
    env: &dyn Environment,
    cfg: &HorizonConfig,
    hidden: &[usize],
    baseline: &BaselineConfig,
    search: &SearchConfig,
    seed: u64,
) -> Result<BaselineOutcome, RepairError> {
    cfg.validate()?;
    baseline.solver.validate()?;
    if baseline.minibatch == 0 || baseline.max_attempts == 0 {
        return Err(RepairError::InvalidConfig(
            "baseline minibatch and max_attempts must be >= 1".into(),
        ));
    }
    for attempt in 0..baseline.max_attempts {
        let index = attempt as u64;
        let start = init_policy(env, hidden, seeds::derive_indexed(seed, seeds::INIT, index))?;
        let mut objective = ReturnObjective {
            env,
            template: &start,
            cfg: *cfg,
            minibatch: baseline.minibatch,
            bptt_max_horizon: baseline.bptt_max_horizon,
            rng: seeds::rng(seeds::derive_indexed(seed, seeds::BASELINE, index)),
        };
        let mut eval = |p: &[f64]| objective.mean_return_and_grad(p);
        let outcome = solve_l1_penalty(
            &mut eval,
            &ConstraintList(Vec::new()),
            start.params(),
            &baseline.solver,
        )?;
        let policy = start.with_params(outcome.params)?;

        let mut counterexamples = falsify(
            env,
            &policy,
            cfg,
            search,
            search.falsifier_budget,
            seeds::derive_indexed(seed, seeds::FALSIFIER, index),
        )?;
        let grid = verify_grid(
            env,
            &policy,
            cfg,
            search.grid_resolution,
            search.grid_cap,
            search.max_reported,
        )?;
        if grid.verdict == Verdict::Unsafe {
            counterexamples.extend(grid.counterexamples);
        }
        if !counterexamples.is_empty() {
            return Ok(BaselineOutcome {
                policy,
                counterexamples,
                attempts: attempt + 1,
                mean_objective: outcome.history.last().map(|r| r.objective),
            });
        }
    }
    Err(RepairError::BaselineExhausted {
        attempts: baseline.max_attempts,
    })
}
