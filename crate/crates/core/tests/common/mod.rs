//! Test-side oracles and small constructed environments shared by the
//! integration suites. Nothing here calls the code paths it is used to check.

#![allow(dead_code)]

use std::sync::Arc;

use critic_repair::cmdp::{BoxSet, Environment, HorizonConfig, State};
use critic_repair::critic::{repair_critic, CriticDataset, CriticSample, SampleSource};
use critic_repair::envs::{make_env, EnvSpec};
use critic_repair::neural::{Activation, InputNormalization, Network, OutputTransform};
use critic_repair::repair::{
    init_critic, init_policy, remove_counterexamples, train_unsafe_baseline, BaselineConfig,
    PenaltyConfig, RemovalStatus, RepairConfig, UnsafeArchive,
};
use critic_repair::search::{falsify, verify_grid, CounterexampleSet, Finding, SearchConfig};

pub fn env(name: &str) -> Arc<dyn Environment> {
    make_env(&EnvSpec::named(name)).unwrap()
}

/// Seeded random policy with small hidden layers.
pub fn random_policy(env: &dyn Environment, seed: u64) -> Network {
    init_policy(env, &[8, 8], seed).unwrap()
}

/// Brute-force safety value: walk the rollout by hand and fold the minimum.
pub fn brute_force_safety_value(
    env: &dyn Environment,
    policy: &Network,
    s0: &[f64],
    horizon: usize,
) -> f64 {
    let bounds = env.action_box();
    let mut state = s0.to_vec();
    let mut worst = env.satisfaction(&state);
    for _ in 0..horizon {
        let raw = policy.forward(&state).unwrap();
        let action: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, a)| a.max(bounds.low[i]).min(bounds.high[i]))
            .collect();
        state = env.transition(&state, &action);
        let c = env.satisfaction(&state);
        if c < worst {
            worst = c;
        }
    }
    worst
}

/// Discounted return computed by a separate loop.
pub fn brute_force_return(
    env: &dyn Environment,
    policy: &Network,
    s0: &[f64],
    cfg: &HorizonConfig,
) -> f64 {
    let bounds = env.action_box();
    let mut state = s0.to_vec();
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 0..cfg.horizon {
        let raw = policy.forward(&state).unwrap();
        let action: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, a)| a.max(bounds.low[i]).min(bounds.high[i]))
            .collect();
        total += weight * env.reward(&state, &action);
        weight *= cfg.discount;
        state = env.transition(&state, &action);
    }
    total
}

/// Geometric safe-set membership, independent of the satisfaction functions.
pub fn geometrically_safe(name: &str, s: &[f64]) -> bool {
    match name {
        "thermostat" => (15.0..=25.0).contains(&s[0]),
        "pointmass" => {
            let (dx, dy) = (s[0] - 0.5, s[1] - 0.5);
            dx * dx + dy * dy >= 0.2 * 0.2
        }
        other => panic!("no geometry for {other}"),
    }
}

/// Central difference of a scalar function along every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Normwise relative error, absolute when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Every grid point of an axis-aligned box at `resolution`, both endpoints
/// included, enumerated by nested loops.
pub fn brute_force_grid(initial: &BoxSet, resolution: f64) -> Vec<State> {
    let axes: Vec<Vec<f64>> = initial
        .low
        .iter()
        .zip(&initial.high)
        .map(|(&lo, &hi)| {
            if hi == lo {
                return vec![lo];
            }
            let mut n = 1usize;
            while lo + n as f64 * resolution < hi - 1e-9 * resolution {
                n += 1;
            }
            (0..=n)
                .map(|k| {
                    if k == n {
                        hi
                    } else {
                        lo + (hi - lo) * k as f64 / n as f64
                    }
                })
                .collect()
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::new();
        for prefix in &points {
            for &v in axis {
                let mut p: Vec<f64> = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        points = next;
    }
    points
}

/// Wraps an environment and multiplies every reward by `k`.
pub struct ScaledReward {
    pub inner: Arc<dyn Environment>,
    pub k: f64,
}

impl Environment for ScaledReward {
    fn name(&self) -> &str {
        "scaled"
    }
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_box(&self) -> &BoxSet {
        self.inner.action_box()
    }
    fn initial_box(&self) -> &BoxSet {
        self.inner.initial_box()
    }
    fn default_horizon(&self) -> HorizonConfig {
        self.inner.default_horizon()
    }
    fn transition(&self, s: &[f64], a: &[f64]) -> State {
        self.inner.transition(s, a)
    }
    fn transition_jacobians(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.inner.transition_jacobians(s, a)
    }
    fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        self.k * self.inner.reward(s, a)
    }
    fn reward_gradients(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ds, da) = self.inner.reward_gradients(s, a);
        (
            ds.iter().map(|g| self.k * g).collect(),
            da.iter().map(|g| self.k * g).collect(),
        )
    }
    fn satisfaction(&self, s: &[f64]) -> f64 {
        self.inner.satisfaction(s)
    }
    fn state_normalization(&self) -> InputNormalization {
        self.inner.state_normalization()
    }
}

/// One-step fork: from the origin the agent jumps to `s1 = a`. Rewards peak
/// at `a = ±0.8`, both of which leave the safe band `|s| ≤ 0.5`, and the
/// reward valley at `a = 0` separates the two unsafe modes.
pub struct Fork {
    actions: BoxSet,
    initial: BoxSet,
}

impl Default for Fork {
    fn default() -> Self {
        Self {
            actions: BoxSet::new(vec![-3.0], vec![3.0]),
            initial: BoxSet::new(vec![0.0], vec![0.0]),
        }
    }
}

impl Environment for Fork {
    fn name(&self) -> &str {
        "fork"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_box(&self) -> &BoxSet {
        &self.actions
    }
    fn initial_box(&self) -> &BoxSet {
        &self.initial
    }
    fn default_horizon(&self) -> HorizonConfig {
        HorizonConfig::new(1, 1.0).unwrap()
    }
    fn transition(&self, s: &[f64], a: &[f64]) -> State {
        vec![s[0] + a[0]]
    }
    fn transition_jacobians(&self, _s: &[f64], _a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0], vec![1.0])
    }
    fn reward(&self, _s: &[f64], a: &[f64]) -> f64 {
        let q = a[0] * a[0] - 0.64;
        -q * q
    }
    fn reward_gradients(&self, _s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0], vec![-4.0 * a[0] * (a[0] * a[0] - 0.64)])
    }
    fn satisfaction(&self, s: &[f64]) -> f64 {
        0.5 - s[0].abs()
    }
}

/// Identity dynamics on the line with `c(s) = 0.5 - s`: every state above
/// 0.5 is a counterexample for any policy.
pub struct Line {
    actions: BoxSet,
    initial: BoxSet,
}

impl Default for Line {
    fn default() -> Self {
        Self {
            actions: BoxSet::new(vec![-1.0], vec![1.0]),
            initial: BoxSet::new(vec![0.0], vec![1.0]),
        }
    }
}

impl Environment for Line {
    fn name(&self) -> &str {
        "line"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_box(&self) -> &BoxSet {
        &self.actions
    }
    fn initial_box(&self) -> &BoxSet {
        &self.initial
    }
    fn default_horizon(&self) -> HorizonConfig {
        HorizonConfig::new(1, 1.0).unwrap()
    }
    fn transition(&self, s: &[f64], _a: &[f64]) -> State {
        s.to_vec()
    }
    fn transition_jacobians(&self, _s: &[f64], _a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0], vec![0.0])
    }
    fn reward(&self, _s: &[f64], _a: &[f64]) -> f64 {
        0.0
    }
    fn reward_gradients(&self, _s: &[f64], _a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0], vec![0.0])
    }
    fn satisfaction(&self, s: &[f64]) -> f64 {
        0.5 - s[0]
    }
}

/// Thermostat policy that always applies `u`, clamped to the action box.
pub fn constant_heating(u: f64) -> Network {
    Network::from_params(
        vec![1, 1],
        Activation::Tanh,
        OutputTransform::Affine,
        vec![0.0, u],
        0,
    )
    .unwrap()
}

/// Initial policy for the fork: `a = 0.8` at the origin, through a squash on
/// the fork's action box.
pub fn fork_policy() -> Network {
    Network::from_params(
        vec![1, 1],
        Activation::Tanh,
        OutputTransform::BoxSquash {
            low: vec![-3.0],
            high: vec![3.0],
        },
        vec![0.0, (0.8f64 / 3.0).atanh()],
        0,
    )
    .unwrap()
}

/// Removal settings for the fork: no probes or anchors, so the dataset holds
/// only the current rollout and, when enabled, the archived witnesses.
pub fn fork_settings(retain: bool, max_inner_iterations: usize) -> RepairConfig {
    RepairConfig {
        critic_rollouts: 1,
        action_probes: 0,
        critic_batch: 0,
        minibatch: 1,
        max_inner_iterations,
        retain_unsafe_trajectories: retain,
        trajectory_anchors: false,
        witnesses_per_counterexample: 32,
        policy_solver: PenaltyConfig {
            learning_rate: 1e-2,
            inner_steps: 100,
            ..PenaltyConfig::default()
        },
        critic_solver: PenaltyConfig {
            learning_rate: 5e-2,
            inner_steps: 200,
            ..PenaltyConfig::default()
        },
        ..RepairConfig::default()
    }
}

pub fn fork_counterexamples(env: &Fork, policy: &Network) -> CounterexampleSet {
    let mut set = CounterexampleSet::new(1e-3);
    let cfg = env.default_horizon();
    set.absorb(
        env,
        policy,
        &cfg,
        &[Finding {
            state: vec![0.0],
            min_c: -0.3,
        }],
        0,
    )
    .unwrap();
    assert_eq!(set.len(), 1);
    set
}

pub fn affine_critic(w: f64, b: f64) -> Network {
    // Inputs are (s, a); the zero policy keeps a = 0, so the action weight
    // never moves and the fixture has exactly two live parameters.
    Network::from_params(
        vec![2, 1],
        Activation::Tanh,
        OutputTransform::Affine,
        vec![w, 0.0, b],
        0,
    )
    .unwrap()
}

pub fn line_dataset(policy: &Network, points: &[(f64, f64)]) -> CriticDataset {
    CriticDataset {
        samples: points
            .iter()
            .map(|&(x, target)| CriticSample {
                state: vec![x],
                action: vec![0.0],
                target,
                source: SampleSource::Rollout,
            })
            .collect(),
        policy_fingerprint: policy.fingerprint(),
    }
}

/// Minimum of the mean squared error over a (w, b) grid, keeping only points
/// with `w·x + b ≤ -margin` at every constrained `x`.
pub fn grid_search_optimum(points: &[(f64, f64)], constrained: &[f64], margin: f64) -> f64 {
    let mut best = f64::INFINITY;
    let steps = 3000;
    for i in 0..=steps {
        let w = -3.0 + 6.0 * i as f64 / steps as f64;
        for j in 0..=steps {
            let b = -3.0 + 6.0 * j as f64 / steps as f64;
            if constrained.iter().any(|x| w * x + b > -margin) {
                continue;
            }
            let loss = points
                .iter()
                .map(|(x, t)| (w * x + b - t).powi(2))
                .sum::<f64>()
                / points.len() as f64;
            best = best.min(loss);
        }
    }
    best
}

/// Repairs the two-parameter critic on `points` with `x = 1` constrained and
/// returns (solver loss, grid-search optimum, feasible).
pub fn affine_fixture(points: &[(f64, f64)]) -> (f64, f64, bool) {
    let env = Line::default();
    let policy = constant_heating(0.0);
    let cfg = env.default_horizon();
    let dataset = line_dataset(&policy, points);
    let opt = PenaltyConfig {
        // Fixed-step ascent zigzags across the active constraint with an
        // amplitude proportional to the step, so the step is kept small.
        learning_rate: 2e-3,
        inner_steps: 20_000,
        constraint_margin: 0.01,
        ..PenaltyConfig::default()
    };
    let repaired = repair_critic(
        &env,
        &policy,
        &cfg,
        &affine_critic(0.0, 0.0),
        &dataset,
        &[vec![1.0]],
        &opt,
        0,
    )
    .unwrap();
    let oracle = grid_search_optimum(points, &[1.0], 0.01);
    (repaired.loss, oracle, repaired.feasible)
}

/// Falsifier findings plus grid counterexamples, absorbed into a fresh set.
pub fn retained_set(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    search: &SearchConfig,
) -> CounterexampleSet {
    let mut set = CounterexampleSet::new(search.dedup_radius);
    let found = falsify(env, policy, cfg, search, search.falsifier_budget, 17).unwrap();
    set.absorb(env, policy, cfg, &found, 0).unwrap();
    let grid = verify_grid(
        env,
        policy,
        cfg,
        search.grid_resolution,
        search.grid_cap,
        search.max_reported,
    )
    .unwrap();
    set.absorb(env, policy, cfg, &grid.counterexamples, 0)
        .unwrap();
    set
}

/// Every retained initial state is safe under `policy` by the brute-force oracle.
pub fn assert_all_removed(
    env: &dyn Environment,
    policy: &Network,
    cfg: &HorizonConfig,
    set: &CounterexampleSet,
) {
    for s0 in set.initial_states() {
        let value = brute_force_safety_value(env, policy, s0, cfg.horizon);
        assert!(value >= 0.0, "{s0:?} still unsafe ({value})");
    }
}

/// Removal from the seeded unsafe baseline; panics unless every retained
/// counterexample is removed within the inner budget. Returns the inner
/// iterations used and the retained set size.
pub fn removal_fixture(name: &str, grid_resolution: f64) -> (usize, usize) {
    let env = env(name);
    let cfg = env.default_horizon();
    let settings = RepairConfig {
        search: SearchConfig {
            grid_resolution,
            ..SearchConfig::default()
        },
        ..RepairConfig::default()
    };
    let policy = train_unsafe_baseline(
        env.as_ref(),
        &cfg,
        &[32, 32],
        &BaselineConfig::default(),
        &settings.search,
        0,
    )
    .unwrap()
    .policy;
    let set = retained_set(env.as_ref(), &policy, &cfg, &settings.search);
    assert!(!set.is_empty());
    let critic = init_critic(env.as_ref(), &[64, 64], 1).unwrap();
    let mut archive = UnsafeArchive::new(settings.witnesses_per_counterexample);
    let out = remove_counterexamples(
        env.as_ref(),
        &policy,
        &critic,
        &set,
        &mut archive,
        &cfg,
        &settings,
        0,
    )
    .unwrap();
    assert_eq!(
        out.status,
        RemovalStatus::Removed,
        "{name}: {} live",
        out.live.len()
    );
    assert!(out.inner_iterations <= settings.max_inner_iterations);
    assert!(out.live.is_empty());
    assert_all_removed(env.as_ref(), &out.policy, &cfg, &set);
    (out.inner_iterations, set.len())
}

/// Actions at the origin after each of `rounds` single-round removal calls,
/// carrying the policy, critic and archive from one call to the next.
pub fn scripted_rounds(retain: bool, rounds: u64) -> Vec<f64> {
    let env = Fork::default();
    let cfg = env.default_horizon();
    let mut policy = fork_policy();
    let mut critic = Network::critic(2, &[4], 1).unwrap();
    let set = fork_counterexamples(&env, &policy);
    let settings = fork_settings(retain, 1);
    let mut archive = UnsafeArchive::new(settings.witnesses_per_counterexample);
    let mut actions = Vec::new();
    for round in 0..rounds {
        let out = remove_counterexamples(
            &env,
            &policy,
            &critic,
            &set,
            &mut archive,
            &cfg,
            &settings,
            round,
        )
        .unwrap();
        policy = out.policy;
        critic = out.critic;
        actions.push(policy.forward(&[0.0]).unwrap()[0]);
    }
    actions
}
