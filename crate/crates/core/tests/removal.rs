mod common;

use std::sync::Arc;

use critic_repair::cmdp::{policy_action, BoxSet, Environment, HorizonConfig, State};
use critic_repair::critic::critic_input;
use critic_repair::neural::{Activation, Network, OutputTransform};
use critic_repair::repair::{
    evaluation_states, init_critic, mean_return, remove_counterexamples, repair,
    train_unsafe_baseline, BaselineConfig, PenaltyConfig, RemovalStatus, RepairConfig, RepairError,
    UnsafeArchive,
};
use critic_repair::search::{verify_grid, CounterexampleSet, Finding, SearchConfig, Verdict};

use common::{
    assert_all_removed, constant_heating, env, fork_counterexamples, fork_policy, fork_settings,
    removal_fixture, retained_set, scripted_rounds, Fork,
};

#[test]
fn thermostat_removal_exits_with_every_counterexample_removed() {
    removal_fixture("thermostat", 0.1);
}

#[test]
fn pointmass_removal_exits_with_every_counterexample_removed() {
    removal_fixture("pointmass", 0.02);
}

#[test]
fn safe_policy_exits_before_any_update() {
    let env = env("thermostat");
    let cfg = env.default_horizon();
    let unsafe_policy = constant_heating(1.0);
    let mut set = CounterexampleSet::new(1e-3);
    set.absorb(
        env.as_ref(),
        &unsafe_policy,
        &cfg,
        &[Finding {
            state: vec![21.0],
            min_c: -1.0,
        }],
        0,
    )
    .unwrap();
    assert_eq!(set.len(), 1);
    let safe = constant_heating(0.0);
    let critic = init_critic(env.as_ref(), &[8], 0).unwrap();
    let mut archive = UnsafeArchive::new(4);
    let out = remove_counterexamples(
        env.as_ref(),
        &safe,
        &critic,
        &set,
        &mut archive,
        &cfg,
        &RepairConfig::default(),
        0,
    )
    .unwrap();
    assert_eq!(out.status, RemovalStatus::Removed);
    assert_eq!(out.inner_iterations, 0);
    assert_eq!(out.policy, safe);
    assert_eq!(out.critic, critic);
    assert!(archive.is_empty());
}

#[test]
fn empty_counterexample_set_is_rejected() {
    let env = env("thermostat");
    let cfg = env.default_horizon();
    let policy = constant_heating(0.0);
    let critic = init_critic(env.as_ref(), &[8], 0).unwrap();
    let err = remove_counterexamples(
        env.as_ref(),
        &policy,
        &critic,
        &CounterexampleSet::new(1e-3),
        &mut UnsafeArchive::new(1),
        &cfg,
        &RepairConfig::default(),
        0,
    )
    .unwrap_err();
    assert!(matches!(err, RepairError::EmptyCounterexampleSet));
}

/// Normalised squashed-output policy that starts out heating at rate `u`.
fn squashed_heating(env: &dyn Environment, u: f64) -> Network {
    Network::from_params(
        vec![1, 1],
        Activation::Tanh,
        OutputTransform::BoxSquash {
            low: vec![-1.0],
            high: vec![1.0],
        },
        vec![0.0, u.atanh()],
        0,
    )
    .unwrap()
    .with_input_normalization(env.state_normalization())
    .unwrap()
}

/// A critic that rates every input as comfortably safe.
fn optimistic_critic(env: &dyn Environment) -> Network {
    let critic = init_critic(env, &[16], 4).unwrap();
    let mut params = critic.params().to_vec();
    *params.last_mut().unwrap() += 5.0;
    critic.with_params(params).unwrap()
}

#[test]
fn mislabelling_critic_needs_several_rounds() {
    let env = env("thermostat");
    let cfg = env.default_horizon();
    // Heating at 0.45 overshoots 25 from every start above 20.
    let policy = squashed_heating(env.as_ref(), 0.45);
    let set = retained_set(env.as_ref(), &policy, &cfg, &SearchConfig::default());
    assert!(!set.is_empty());
    let critic = optimistic_critic(env.as_ref());
    for s0 in set.initial_states() {
        let a = policy_action(env.as_ref(), &policy, s0).unwrap();
        assert!(
            critic.forward(&critic_input(s0, &a)).unwrap()[0] > 0.0,
            "fixture critic must mislabel {s0:?}"
        );
    }
    // Small policy steps: one round cannot move the heating rate far enough.
    let settings = RepairConfig {
        policy_solver: PenaltyConfig {
            learning_rate: 2e-3,
            inner_steps: 5,
            max_penalty_rounds: 1,
            ..RepairConfig::default().policy_solver
        },
        ..RepairConfig::default()
    };
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
    assert_eq!(out.status, RemovalStatus::Removed);
    assert!(
        out.inner_iterations >= 2,
        "took {} rounds",
        out.inner_iterations
    );
    assert!(
        out.rounds[0].critic_feasible,
        "the first critic repair must fix the mislabel"
    );
    assert_all_removed(env.as_ref(), &out.policy, &cfg, &set);
}

#[test]
fn forgetting_critic_sends_the_policy_back_without_retention() {
    // Round 1 repairs the critic at a = +0.8 and the policy escapes to the
    // other reward peak, which is just as unsafe. Round 2 sees only that
    // new witness; the critic forgets the first one and the policy returns
    // to the side it started on.
    let actions = scripted_rounds(false, 3);
    assert!(
        actions.iter().all(|a| a.abs() > 0.5),
        "every round ends unsafe: {actions:?}"
    );
    assert!(
        actions[0] > 0.0 && actions[1] < 0.0 && actions[2] > 0.0,
        "{actions:?}"
    );
}

#[test]
fn retention_changes_the_forgetting_outcome() {
    let env = Fork::default();
    let cfg = env.default_horizon();
    let policy = fork_policy();
    let critic = Network::critic(2, &[4], 1).unwrap();
    let set = fork_counterexamples(&env, &policy);

    let off = fork_settings(false, 20);
    let mut archive = UnsafeArchive::new(off.witnesses_per_counterexample);
    let out =
        remove_counterexamples(&env, &policy, &critic, &set, &mut archive, &cfg, &off, 7).unwrap();
    assert_eq!(out.status, RemovalStatus::NotConverged);
    assert_eq!(out.inner_iterations, 20);
    assert!(archive.is_empty());

    let on = fork_settings(true, 20);
    let mut archive = UnsafeArchive::new(on.witnesses_per_counterexample);
    let out =
        remove_counterexamples(&env, &policy, &critic, &set, &mut archive, &cfg, &on, 7).unwrap();
    assert_eq!(out.status, RemovalStatus::Removed);
    assert!(out.inner_iterations < 20);
    assert!(archive.len() >= 2, "both unsafe modes are remembered");
    assert_all_removed(&env, &out.policy, &cfg, &set);
}

#[test]
fn safe_seed_policy_runs_no_removal() {
    let env = env("thermostat");
    let cfg = env.default_horizon();
    let safe = constant_heating(0.0);
    let critic = init_critic(env.as_ref(), &[8], 0).unwrap();
    let settings = RepairConfig::default();
    let run = repair(env.as_ref(), &safe, &critic, &cfg, &settings, &mut |_| {}).unwrap();
    assert_eq!(run.report.outer_iterations, 0);
    assert_eq!(run.report.final_verdict.verdict, Verdict::SafeOnGrid);
    assert_eq!(run.report.mean_return_before, run.report.mean_return_after);
    assert_eq!(run.policy, safe);
    let states = evaluation_states(env.as_ref(), settings.evaluation_states, settings.seed);
    assert_eq!(
        mean_return(env.as_ref(), &safe, &cfg, &states).unwrap(),
        run.report.mean_return_before
    );
}

#[test]
fn thermostat_outer_loop_grows_the_set_monotonically() {
    let env = env("thermostat");
    let cfg = env.default_horizon();
    let settings = RepairConfig::default();
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
    let critic = init_critic(env.as_ref(), &[64, 64], 0).unwrap();
    let mut sizes = Vec::new();
    let run = repair(env.as_ref(), &policy, &critic, &cfg, &settings, &mut |m| {
        sizes.push(m.retained_set_size)
    })
    .unwrap();
    assert!(run.report.succeeded());
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    assert_eq!(
        run.report.counterexample_counts.len(),
        run.report.outer_iterations
    );
    assert_eq!(
        run.report.retained_counts.len(),
        run.report.outer_iterations
    );
    let again = verify_grid(
        env.as_ref(),
        &run.policy,
        &cfg,
        settings.search.grid_resolution,
        settings.search.grid_cap,
        10,
    )
    .unwrap();
    assert_eq!(again.verdict, run.report.final_verdict.verdict);
    assert_all_removed(env.as_ref(), &run.policy, &cfg, &run.counterexamples);
}

/// Thermostat dynamics under a satisfaction function that is never negative.
struct NothingUnsafe(Arc<dyn Environment>);

impl Environment for NothingUnsafe {
    fn name(&self) -> &str {
        "nothing-unsafe"
    }
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn action_box(&self) -> &BoxSet {
        self.0.action_box()
    }
    fn initial_box(&self) -> &BoxSet {
        self.0.initial_box()
    }
    fn default_horizon(&self) -> HorizonConfig {
        self.0.default_horizon()
    }
    fn transition(&self, s: &[f64], a: &[f64]) -> State {
        self.0.transition(s, a)
    }
    fn transition_jacobians(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.0.transition_jacobians(s, a)
    }
    fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        self.0.reward(s, a)
    }
    fn reward_gradients(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.0.reward_gradients(s, a)
    }
    fn satisfaction(&self, _s: &[f64]) -> f64 {
        1.0
    }
    fn state_normalization(&self) -> critic_repair::neural::InputNormalization {
        self.0.state_normalization()
    }
}

#[test]
fn baseline_retries_run_out_when_nothing_is_unsafe() {
    let env = NothingUnsafe(env("thermostat"));
    let cfg = env.default_horizon();
    let baseline = BaselineConfig {
        max_attempts: 3,
        ..BaselineConfig::default()
    };
    let err = train_unsafe_baseline(&env, &cfg, &[8], &baseline, &SearchConfig::default(), 0)
        .unwrap_err();
    assert!(matches!(
        err,
        RepairError::BaselineExhausted { attempts: 3 }
    ));
}
