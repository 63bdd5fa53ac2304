//! Counterexample search: a sampling falsifier with local descent, an
//! exhaustive grid verifier over the initial box, and the retained
//! counterexample set.
//!
//! Everything returned here has been confirmed by simulation. The grid
//! verifier is complete only with respect to its grid; a `SafeOnGrid` verdict
//! says nothing about initial states between grid points.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cmdp::{
    min_satisfaction, simulate, BoxSet, CmdpError, Environment, HorizonConfig, State, Trajectory,
};
use crate::neural::{Fingerprint, Network};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Random candidates drawn by the falsifier per call.
    pub falsifier_budget: usize,
    /// Maximum counterexamples the falsifier returns per call.
    pub batch_size: usize,
    /// Near misses refined by local descent when sampling finds too few.
    pub descent_starts: usize,
    pub descent_steps: usize,
    pub grid_resolution: f64,
    pub grid_cap: usize,
    /// Maximum unsafe grid points listed in a verification outcome.
    pub max_reported: usize,
    pub dedup_radius: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            falsifier_budget: 256,
            batch_size: 16,
            descent_starts: 8,
            descent_steps: 20,
            grid_resolution: 0.1,
            grid_cap: 10_000_000,
            max_reported: 10_000,
            dedup_radius: 1e-3,
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("falsifier budget must be >= 1")]
    ZeroBudget,
    #[error("grid resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("grid needs {required} points, above the cap of {cap}")]
    GridTooLarge { required: u128, cap: usize },
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
}

/// A confirmed counterexample initial state and the minimum satisfaction
/// value its trajectory reaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub state: State,
    pub min_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SafeOnGrid,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub counterexamples: Vec<Finding>,
    /// Unsafe grid points, including those beyond the reporting cap.
    pub unsafe_points: usize,
    pub grid_resolution: f64,
    pub states_checked: usize,
}

/// Witness trajectory when `s0` leads to an unsafe state.
pub fn confirm(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    s0: &[f64],
) -> Result<Option<Trajectory>, CmdpError> {
    let traj = simulate(env, policy, s0, cfg)?;
    Ok((min_satisfaction(env, &traj) < 0.0).then_some(traj))
}

pub(crate) fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Sort lexicographically and greedily drop states within `radius` of a kept one.
fn sort_and_dedup(mut findings: Vec<Finding>, radius: f64) -> Vec<Finding> {
    findings.sort_by(|a, b| lexicographic(&a.state, &b.state));
    let mut kept: Vec<Finding> = Vec::with_capacity(findings.len());
    for f in findings {
        if kept
            .iter()
            .all(|k| inf_distance(&k.state, &f.state) > radius)
        {
            kept.push(f);
        }
    }
    kept
}

/// Sound, incomplete counterexample search.
///
/// Draws `budget` uniform candidates from the initial box. If fewer than
/// `batch_size` are unsafe, the safest-looking near misses are refined by
/// coordinate-wise pattern descent on the simulated safety value, projected
/// into the box. Only simulated-unsafe states are returned.
pub fn falsify(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    search: &SearchConfig,
    budget: usize,
    seed: u64,
) -> Result<Vec<Finding>, SearchError> {
    if budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let initial = env.initial_box();
    let mut rng = seeds::rng(seed);
    let candidates: Vec<State> = (0..budget).map(|_| initial.sample(&mut rng)).collect();
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|s| Ok(min_satisfaction(env, &simulate(env, policy, s, cfg)?)))
        .collect::<Result<_, CmdpError>>()?;

    let mut findings = Vec::new();
    let mut near_misses = Vec::new();
    for (state, value) in candidates.into_iter().zip(values) {
        if value < 0.0 {
            findings.push(Finding {
                state,
                min_c: value,
            });
        } else {
            near_misses.push((state, value));
        }
    }

    if findings.len() < search.batch_size && search.descent_steps > 0 {
        near_misses.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lexicographic(&a.0, &b.0)));
        near_misses.truncate(search.descent_starts);
        let refined: Vec<Option<Finding>> = near_misses
            .into_par_iter()
            .map(|(s, v)| descend(env, policy, cfg, initial, s, v, search.descent_steps))
            .collect::<Result<_, CmdpError>>()?;
        findings.extend(refined.into_iter().flatten());
    }

    let mut findings = sort_and_dedup(findings, search.dedup_radius);
    findings.truncate(search.batch_size);
    Ok(findings)
}

fn descend(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    initial: &BoxSet,
    mut state: State,
    mut value: f64,
    steps: usize,
) -> Result<Option<Finding>, CmdpError> {
    let widths: Vec<f64> = initial
        .low
        .iter()
        .zip(&initial.high)
        .map(|(l, h)| h - l)
        .collect();
    let mut step: Vec<f64> = widths.iter().map(|w| 0.1 * w).collect();
    for _ in 0..steps {
        let mut best: Option<(State, f64)> = None;
        for k in 0..state.len() {
            if widths[k] <= 0.0 {
                continue;
            }
            for sign in [-1.0, 1.0] {
                let mut probe = state.clone();
                probe[k] = (probe[k] + sign * step[k]).clamp(initial.low[k], initial.high[k]);
                let v = min_satisfaction(env, &simulate(env, policy, &probe, cfg)?);
                if v < best.as_ref().map_or(value, |b| b.1) {
                    best = Some((probe, v));
                }
            }
        }
        match best {
            Some((s, v)) => {
                state = s;
                value = v;
                if value < 0.0 {
                    return Ok(Some(Finding {
                        state,
                        min_c: value,
                    }));
                }
            }
            None => step.iter_mut().for_each(|s| *s *= 0.5),
        }
    }
    Ok(None)
}

/// Grid coordinates along one axis: endpoints exact, spacing at most `resolution`.
pub fn axis_points(low: f64, high: f64, resolution: f64) -> Vec<f64> {
    if high <= low {
        return vec![low];
    }
    let intervals = ((high - low) / resolution - 1e-9).ceil().max(1.0) as usize;
    (0..=intervals)
        .map(|i| {
            if i == intervals {
                high
            } else {
                low + (high - low) * i as f64 / intervals as f64
            }
        })
        .collect()
}

/// Number of grid points [`verify_grid`] would simulate.
pub fn grid_size(initial: &BoxSet, resolution: f64) -> Result<u128, SearchError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(SearchError::InvalidResolution(resolution));
    }
    Ok(initial
        .low
        .iter()
        .zip(&initial.high)
        .map(|(lo, hi)| {
            if hi <= lo {
                1u128
            } else {
                (((hi - lo) / resolution - 1e-9).ceil().max(1.0) as u128).saturating_add(1)
            }
        })
        .fold(1u128, |acc, n| acc.saturating_mul(n)))
}

/// Exhaustive check of every grid point of the initial box.
pub fn verify_grid(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    resolution: f64,
    grid_cap: usize,
    max_reported: usize,
) -> Result<VerificationOutcome, SearchError> {
    let initial = env.initial_box();
    let required = grid_size(initial, resolution)?;
    if required > grid_cap as u128 {
        return Err(SearchError::GridTooLarge {
            required,
            cap: grid_cap,
        });
    }
    let axes: Vec<Vec<f64>> = initial
        .low
        .iter()
        .zip(&initial.high)
        .map(|(lo, hi)| axis_points(*lo, *hi, resolution))
        .collect();
    let total = required as usize;
    // last axis varies fastest, so index order is lexicographic order
    let point = |mut index: usize| -> State {
        let mut state = vec![0.0; axes.len()];
        for (k, axis) in axes.iter().enumerate().rev() {
            state[k] = axis[index % axis.len()];
            index /= axis.len();
        }
        state
    };
    let results: Vec<Option<Finding>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let state = point(i);
            let min_c = min_satisfaction(env, &simulate(env, policy, &state, cfg)?);
            Ok((min_c < 0.0).then_some(Finding { state, min_c }))
        })
        .collect::<Result<_, CmdpError>>()?;
    let all: Vec<Finding> = results.into_iter().flatten().collect();
    let unsafe_points = all.len();
    let mut counterexamples = all;
    counterexamples.truncate(max_reported);
    Ok(VerificationOutcome {
        verdict: if unsafe_points == 0 {
            Verdict::SafeOnGrid
        } else {
            Verdict::Unsafe
        },
        counterexamples,
        unsafe_points,
        grid_resolution: resolution,
        states_checked: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleEntry {
    pub initial_state: State,
    pub witness: Trajectory,
    pub found_at_iteration: usize,
}

/// Retained counterexamples. Entries are only ever added; no two lie within
/// `dedup_radius` of each other in the infinity norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSet {
    entries: Vec<CounterexampleEntry>,
    dedup_radius: f64,
}

impl CounterexampleSet {
    pub fn new(dedup_radius: f64) -> Self {
        Self {
            entries: Vec::new(),
            dedup_radius,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CounterexampleEntry] {
        &self.entries
    }

    pub fn dedup_radius(&self) -> f64 {
        self.dedup_radius
    }

    pub fn initial_states(&self) -> impl Iterator<Item = &State> {
        self.entries.iter().map(|e| &e.initial_state)
    }

    pub fn contains_near(&self, state: &[f64]) -> bool {
        self.entries
            .iter()
            .any(|e| inf_distance(&e.initial_state, state) <= self.dedup_radius)
    }

    /// Adds the entry unless it duplicates a retained one; returns whether it was added.
    pub fn insert(
        &mut self,
        initial_state: State,
        witness: Trajectory,
        found_at_iteration: usize,
    ) -> bool {
        if self.contains_near(&initial_state) {
            return false;
        }
        self.entries.push(CounterexampleEntry {
            initial_state,
            witness,
            found_at_iteration,
        });
        true
    }

    /// Confirms each finding under `policy` and inserts the genuine ones.
    pub fn absorb(
        &mut self,
        env: &dyn Environment,
        policy: &Network,
        cfg: &HorizonConfig,
        findings: &[Finding],
        iteration: usize,
    ) -> Result<usize, CmdpError> {
        let mut added = 0;
        for f in findings {
            if self.contains_near(&f.state) {
                continue;
            }
            if let Some(witness) = confirm(env, policy, cfg, &f.state)? {
                added += usize::from(self.insert(f.state.clone(), witness, iteration));
            }
        }
        Ok(added)
    }

    /// Entries that are still counterexamples under `policy`, with fresh witnesses.
    pub fn live(
        &self,
        env: &dyn Environment,
        policy: &Network,
        cfg: &HorizonConfig,
    ) -> Result<Vec<(usize, Trajectory)>, CmdpError> {
        let witnesses: Vec<Option<Trajectory>> = self
            .entries
            .par_iter()
            .map(|e| confirm(env, policy, cfg, &e.initial_state))
            .collect::<Result<_, _>>()?;
        Ok(witnesses
            .into_iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|w| (i, w)))
            .collect())
    }

    /// Digest of the retained initial states, in insertion order.
    pub fn digest(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for state in self.initial_states() {
            for v in state {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update([0xff]);
        }
        Fingerprint(hex::encode(&hasher.finalize()[..16]))
    }
}
