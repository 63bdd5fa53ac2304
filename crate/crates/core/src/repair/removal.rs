//! Counterexample removal: alternate critic repair and policy update until no
//! retained counterexample is unsafe under the current policy.

use serde::{Deserialize, Serialize};

use crate::cmdp::{Environment, HorizonConfig, State, Trajectory};
use crate::critic::{collect_dataset, repair_critic, DatasetPlan};
use crate::neural::Network;
use crate::repair::policy::update_policy;
use crate::repair::{PenaltyConfig, RepairConfig, RepairError};
use crate::search::CounterexampleSet;
use crate::seeds;

/// Recorded unsafe trajectories per counterexample entry, indexed like the
/// entries of the counterexample set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnsafeArchive {
    per_entry: Vec<Vec<Trajectory>>,
    capacity: usize,
    next_slot: Vec<usize>,
}

impl UnsafeArchive {
    pub fn new(capacity: usize) -> Self {
        Self {
            per_entry: Vec::new(),
            capacity: capacity.max(1),
            next_slot: Vec::new(),
        }
    }

    /// Stores `witness` for entry `index`. The first witness of an entry is
    /// kept forever; later ones rotate through the remaining slots.
    pub fn record(&mut self, index: usize, witness: Trajectory) {
        if self.per_entry.len() <= index {
            self.per_entry.resize_with(index + 1, Vec::new);
            self.next_slot.resize(index + 1, 1);
        }
        let slots = &mut self.per_entry[index];
        if slots.iter().any(|t| t.states == witness.states) {
            return;
        }
        if slots.len() < self.capacity {
            slots.push(witness);
        } else if self.capacity > 1 {
            let slot = self.next_slot[index];
            slots[slot] = witness;
            self.next_slot[index] = if slot + 1 >= self.capacity {
                1
            } else {
                slot + 1
            };
        }
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.per_entry.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_entry.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalStatus {
    /// No retained counterexample is unsafe under the returned policy.
    Removed,
    /// The inner iteration budget ran out with live counterexamples left.
    NotConverged,
}

/// One critic-repair / policy-update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub live_counterexamples: usize,
    pub critic_feasible: bool,
    pub critic_max_value: Option<f64>,
    pub critic_loss: f64,
    pub policy_feasible: bool,
    pub penalty_weight: f64,
}

#[derive(Debug, Clone)]
pub struct RemovalOutcome {
    pub policy: Network,
    pub critic: Network,
    pub status: RemovalStatus,
    /// Critic-repair / policy-update rounds performed.
    pub inner_iterations: usize,
    /// Retained counterexamples still unsafe under the returned policy.
    pub live: Vec<State>,
    pub rounds: Vec<InnerRecord>,
}

/// States after the initial one and before the first unsafe state.
fn pre_violation_states(env: &dyn Environment, witness: &Trajectory) -> Vec<State> {
    witness
        .states
        .iter()
        .skip(1)
        .take_while(|s| env.satisfaction(s) >= 0.0)
        .cloned()
        .collect()
}

fn with_seed(opt: &PenaltyConfig, seed: u64) -> PenaltyConfig {
    PenaltyConfig {
        seed,
        ..opt.clone()
    }
}

/// Repeat critic repair and policy update while any retained counterexample
/// is unsafe under the current policy.
///
/// The critic is constrained on the live counterexamples; the policy update
/// is constrained on every retained counterexample. With
/// `retain_unsafe_trajectories` set, each live witness is archived and all
/// archived trajectories stay in the critic's training data so later policy
/// updates cannot drift back into previously repaired regions unnoticed.
#[allow(clippy::too_many_arguments)]
pub fn remove_counterexamples(
    env: &dyn Environment,
    policy: &Network,
    critic: &Network,
    counterexamples: &CounterexampleSet,
    archive: &mut UnsafeArchive,
    cfg: &HorizonConfig,
    settings: &RepairConfig,
    seed: u64,
) -> Result<RemovalOutcome, RepairError> {
    if counterexamples.is_empty() {
        return Err(RepairError::EmptyCounterexampleSet);
    }
    settings.validate()?;
    let mut policy = policy.clone();
    let mut critic = critic.clone();
    let mut rounds = Vec::new();
    let all_states: Vec<State> = counterexamples.initial_states().cloned().collect();

    for inner in 0..=settings.max_inner_iterations {
        let live = counterexamples.live(env, &policy, cfg)?;
        let live_states: Vec<State> = live
            .iter()
            .map(|(i, _)| counterexamples.entries()[*i].initial_state.clone())
            .collect();
        if live.is_empty() || inner == settings.max_inner_iterations {
            let status = if live.is_empty() {
                RemovalStatus::Removed
            } else {
                RemovalStatus::NotConverged
            };
            return Ok(RemovalOutcome {
                policy,
                critic,
                status,
                inner_iterations: inner,
                live: live_states,
                rounds,
            });
        }

        let anchors: Vec<State> = if settings.trajectory_anchors {
            live.iter()
                .flat_map(|(_, w)| pre_violation_states(env, w))
                .collect()
        } else {
            Vec::new()
        };
        let (replay, retained): (&[State], Vec<Trajectory>) = if settings.retain_unsafe_trajectories
        {
            for (i, witness) in live {
                archive.record(i, witness);
            }
            (&all_states, archive.trajectories().cloned().collect())
        } else {
            (&live_states, Vec::new())
        };
        let round = inner as u64;
        let plan = DatasetPlan {
            n_rollouts: settings.critic_rollouts,
            replay,
            retained: &retained,
            action_probes: settings.action_probes,
        };
        let dataset = collect_dataset(
            env,
            &policy,
            cfg,
            &plan,
            seeds::derive_indexed(seed, seeds::CRITIC_DATA, round),
        )?;
        let critic_opt = with_seed(
            &settings.critic_solver,
            seeds::derive_indexed(seed, seeds::CRITIC_FIT, round),
        );
        let repaired = repair_critic(
            env,
            &policy,
            cfg,
            &critic,
            &dataset,
            &live_states,
            &critic_opt,
            settings.critic_batch,
        )?;
        let opt = with_seed(
            &settings.policy_solver,
            seeds::derive_indexed(seed, seeds::MINIBATCH, round),
        );
        let update = update_policy(
            env,
            &policy,
            &repaired,
            counterexamples,
            &anchors,
            cfg,
            settings,
            &opt,
        )?;
        rounds.push(InnerRecord {
            live_counterexamples: live_states.len(),
            critic_feasible: repaired.feasible,
            critic_max_value: repaired.max_constrained_value,
            critic_loss: repaired.loss,
            policy_feasible: update.feasible,
            penalty_weight: update.penalty_weight,
        });
        critic = repaired.critic;
        policy = update.policy;
    }
    unreachable!("the loop returns at the iteration budget")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(x: f64) -> Trajectory {
        Trajectory {
            states: vec![vec![x], vec![x + 1.0]],
            actions: vec![vec![0.0]],
        }
    }

    #[test]
    fn archive_keeps_first_witness_and_rotates_the_rest() {
        let mut archive = UnsafeArchive::new(3);
        for x in 0..6 {
            archive.record(0, traj(x as f64));
        }
        archive.record(0, traj(5.0));
        let firsts: Vec<f64> = archive.trajectories().map(|t| t.states[0][0]).collect();
        assert_eq!(firsts, vec![0.0, 5.0, 4.0]);
        archive.record(2, traj(9.0));
        assert_eq!(archive.len(), 4);
    }

    #[test]
    fn single_slot_archive_never_evicts() {
        let mut archive = UnsafeArchive::new(1);
        archive.record(0, traj(1.0));
        archive.record(0, traj(2.0));
        assert_eq!(archive.trajectories().next().unwrap().states[0][0], 1.0);
    }
}
