//! Outer repair loop: find counterexamples, retain them, remove them, repeat
//! until the grid verifier and the falsifier both come back empty.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmdp::{return_of, simulate, Environment, HorizonConfig, State};
use crate::critic::critic_input;
use crate::neural::Network;
use crate::repair::removal::{remove_counterexamples, RemovalStatus, UnsafeArchive};
use crate::repair::{RepairConfig, RepairError};
use crate::search::{falsify, verify_grid, CounterexampleSet, Verdict, VerificationOutcome};
use crate::seeds;

/// One line of the metrics stream, emitted after every counterexample search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub live_counterexamples: usize,
    pub retained_set_size: usize,
    pub new_counterexamples: usize,
    pub mean_return: f64,
    /// Minimum of `critic(s0, π(s0))` over retained counterexamples.
    pub min_critic_value: Option<f64>,
    /// Last penalty weight used by the policy update, absent before the first removal.
    pub penalty_weight: Option<f64>,
    pub inner_iterations: usize,
    pub removal_status: Option<RemovalStatus>,
    pub verdict: Verdict,
    pub unsafe_grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    /// Removal rounds performed.
    pub outer_iterations: usize,
    /// Live retained counterexamples after each removal round.
    pub counterexample_counts: Vec<usize>,
    /// Retained set size after each removal round.
    pub retained_counts: Vec<usize>,
    /// Inner iterations used by each removal round.
    pub inner_iterations: Vec<usize>,
    pub mean_return_before: f64,
    pub mean_return_after: f64,
    pub final_verdict: VerificationOutcome,
    /// Counterexamples still unsafe at exit: retained ones first, then
    /// falsifier findings not yet retained.
    pub live_counterexamples: Vec<State>,
    pub retained_set_digest: String,
    /// Seconds; left out of the serialised report so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock: f64,
}

impl RepairReport {
    /// The final policy passed the grid check and the falsifier found nothing.
    pub fn succeeded(&self) -> bool {
        self.final_verdict.verdict == Verdict::SafeOnGrid && self.live_counterexamples.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RepairRun {
    pub policy: Network,
    pub critic: Network,
    pub report: RepairReport,
    pub counterexamples: CounterexampleSet,
    pub metrics: Vec<IterationMetrics>,
}

/// Fixed evaluation initial states for return reporting.
pub fn evaluation_states(env: &dyn Environment, count: usize, seed: u64) -> Vec<State> {
    let mut rng = seeds::rng(seeds::derive_seed(seed, seeds::EVALUATION));
    (0..count)
        .map(|_| env.initial_box().sample(&mut rng))
        .collect()
}

/// Mean discounted return of `policy` over `states`.
pub fn mean_return(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    states: &[State],
) -> Result<f64, RepairError> {
    let returns: Vec<f64> = states
        .par_iter()
        .map(|s0| Ok(return_of(env, &simulate(env, policy, s0, cfg)?, cfg)))
        .collect::<Result<_, RepairError>>()?;
    Ok(returns.iter().sum::<f64>() / states.len().max(1) as f64)
}

fn min_critic_value(
    env: &dyn Environment,
    policy: &Network,
    critic: &Network,
    set: &CounterexampleSet,
) -> Result<Option<f64>, RepairError> {
    let mut min: Option<f64> = None;
    for s0 in set.initial_states() {
        let action = crate::cmdp::policy_action(env, policy, s0)?;
        let q = critic.forward(&critic_input(s0, &action))?[0];
        min = Some(min.map_or(q, |m| m.min(q)));
    }
    Ok(min)
}

struct Search {
    outcome: VerificationOutcome,
    added: usize,
    /// Falsifier findings, all confirmed unsafe.
    falsified: Vec<State>,
}

fn find_counterexamples(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    settings: &RepairConfig,
    set: &mut CounterexampleSet,
    iteration: usize,
) -> Result<Search, RepairError> {
    let search = &settings.search;
    let found = falsify(
        env,
        policy,
        cfg,
        search,
        search.falsifier_budget,
        seeds::derive_indexed(settings.seed, seeds::FALSIFIER, iteration as u64),
    )?;
    let outcome = verify_grid(
        env,
        policy,
        cfg,
        search.grid_resolution,
        search.grid_cap,
        search.max_reported,
    )?;
    let mut added = set.absorb(env, policy, cfg, &found, iteration)?;
    added += set.absorb(env, policy, cfg, &outcome.counterexamples, iteration)?;
    Ok(Search {
        outcome,
        added,
        falsified: found.into_iter().map(|f| f.state).collect(),
    })
}

/// Counterexample-guided repair.
///
/// Each outer iteration searches for counterexamples with the falsifier and
/// the grid verifier, adds every confirmed one to the retained set and runs
/// counterexample removal over the whole set. The loop stops when the grid
/// verdict is safe and nothing is live, or after `max_outer_iterations`
/// removal rounds. `observe` sees each metrics record as it is produced.
pub fn repair(
    env: &dyn Environment,
    policy: &Network,
    critic: &Network,
    cfg: &HorizonConfig,
    settings: &RepairConfig,
    observe: &mut dyn FnMut(&IterationMetrics),
) -> Result<RepairRun, RepairError> {
    let started = Instant::now();
    settings.validate()?;
    cfg.validate()?;
    let eval = evaluation_states(env, settings.evaluation_states, settings.seed);
    let mean_return_before = mean_return(env, policy, cfg, &eval)?;

    let mut policy = policy.clone();
    let mut critic = critic.clone();
    let mut set = CounterexampleSet::new(settings.search.dedup_radius);
    let mut archive = UnsafeArchive::new(settings.witnesses_per_counterexample);
    let mut metrics = Vec::new();
    let mut counterexample_counts = Vec::new();
    let mut retained_counts = Vec::new();
    let mut inner_counts = Vec::new();

    let mut search = find_counterexamples(env, &policy, cfg, settings, &mut set, 0)?;
    let mut live = set.live(env, &policy, cfg)?;
    let first = IterationMetrics {
        iteration: 0,
        live_counterexamples: live.len(),
        retained_set_size: set.len(),
        new_counterexamples: search.added,
        mean_return: mean_return_before,
        min_critic_value: min_critic_value(env, &policy, &critic, &set)?,
        penalty_weight: None,
        inner_iterations: 0,
        removal_status: None,
        verdict: search.outcome.verdict,
        unsafe_grid_points: search.outcome.unsafe_points,
    };
    observe(&first);
    metrics.push(first);

    let mut iteration = 0;
    while (!live.is_empty() || search.outcome.verdict == Verdict::Unsafe)
        && iteration < settings.max_outer_iterations
    {
        iteration += 1;
        let removal = remove_counterexamples(
            env,
            &policy,
            &critic,
            &set,
            &mut archive,
            cfg,
            settings,
            seeds::derive_indexed(settings.seed, seeds::REMOVAL, iteration as u64),
        )?;
        policy = removal.policy;
        critic = removal.critic;
        search = find_counterexamples(env, &policy, cfg, settings, &mut set, iteration)?;
        live = set.live(env, &policy, cfg)?;

        counterexample_counts.push(live.len());
        retained_counts.push(set.len());
        inner_counts.push(removal.inner_iterations);
        let record = IterationMetrics {
            iteration,
            live_counterexamples: live.len(),
            retained_set_size: set.len(),
            new_counterexamples: search.added,
            mean_return: mean_return(env, &policy, cfg, &eval)?,
            min_critic_value: min_critic_value(env, &policy, &critic, &set)?,
            penalty_weight: removal.rounds.last().map(|r| r.penalty_weight),
            inner_iterations: removal.inner_iterations,
            removal_status: Some(removal.status),
            verdict: search.outcome.verdict,
            unsafe_grid_points: search.outcome.unsafe_points,
        };
        observe(&record);
        metrics.push(record);
    }

    let mut live_counterexamples: Vec<State> = live
        .iter()
        .map(|(i, _)| set.entries()[*i].initial_state.clone())
        .collect();
    for s in search.falsified {
        if !set.contains_near(&s) {
            live_counterexamples.push(s);
        }
    }
    let mean_return_after = mean_return(env, &policy, cfg, &eval)?;
    let report = RepairReport {
        outer_iterations: iteration,
        counterexample_counts,
        retained_counts,
        inner_iterations: inner_counts,
        mean_return_before,
        mean_return_after,
        final_verdict: search.outcome,
        live_counterexamples,
        retained_set_digest: set.digest().0,
        wall_clock: started.elapsed().as_secs_f64(),
    };
    Ok(RepairRun {
        policy,
        critic,
        report,
        counterexamples: set,
        metrics,
    })
}
