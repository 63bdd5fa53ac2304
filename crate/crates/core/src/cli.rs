//! Command-line front end: run configuration, subcommands and artifact files.
//!
//! Exit codes: 0 success or safe, 1 usage or configuration error, 2 no unsafe
//! baseline within the retry budget, 3 counterexamples found, 4 repair budget
//! exhausted with live counterexamples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{min_satisfaction, return_of, simulate, Environment, HorizonConfig};
use crate::envs::{make_env, EnvSpec};
use crate::neural::{Network, DEFAULT_BPTT_MAX_HORIZON};
use crate::repair::outer::evaluation_states;
use crate::repair::{
    init_critic, repair, train_unsafe_baseline, BaselineConfig, PenaltyConfig, RepairConfig,
    RepairError,
};
use crate::search::{falsify, grid_size, verify_grid, Finding, SearchConfig, SearchError, Verdict};
use crate::seeds;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BASELINE_EXHAUSTED: i32 = 2;
pub const EXIT_COUNTEREXAMPLES: i32 = 3;
pub const EXIT_BUDGET_EXHAUSTED: i32 = 4;

pub const POLICY_FILE: &str = "policy.json";
pub const REPAIRED_POLICY_FILE: &str = "policy_repaired.json";
pub const CRITIC_FILE: &str = "critic.json";
pub const COUNTEREXAMPLES_FILE: &str = "counterexamples.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const VERIFICATION_FILE: &str = "verification.json";
pub const EVAL_FILE: &str = "eval.json";
pub const BASELINE_SUMMARY_FILE: &str = "baseline.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyBlock {
    pub policy: PenaltyConfig,
    pub critic: PenaltyConfig,
    pub baseline: PenaltyConfig,
}

impl Default for PenaltyBlock {
    fn default() -> Self {
        let repair = RepairConfig::default();
        Self {
            policy: repair.policy_solver,
            critic: repair.critic_solver,
            baseline: BaselineConfig::default().solver,
        }
    }
}

/// Loop budgets and data sizes of the repair run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairBudgets {
    pub critic_rollouts: usize,
    pub action_probes: usize,
    pub critic_batch: usize,
    pub minibatch: usize,
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    pub retain_unsafe_trajectories: bool,
    pub trajectory_anchors: bool,
    pub witnesses_per_counterexample: usize,
    pub bptt_max_horizon: usize,
    pub evaluation_states: usize,
}

impl Default for RepairBudgets {
    fn default() -> Self {
        let r = RepairConfig::default();
        Self {
            critic_rollouts: r.critic_rollouts,
            action_probes: r.action_probes,
            critic_batch: r.critic_batch,
            minibatch: r.minibatch,
            max_inner_iterations: r.max_inner_iterations,
            max_outer_iterations: r.max_outer_iterations,
            retain_unsafe_trajectories: r.retain_unsafe_trajectories,
            trajectory_anchors: r.trajectory_anchors,
            witnesses_per_counterexample: r.witnesses_per_counterexample,
            bptt_max_horizon: r.bptt_max_horizon,
            evaluation_states: r.evaluation_states,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineBudgets {
    pub minibatch: usize,
    pub max_attempts: usize,
}

impl Default for BaselineBudgets {
    fn default() -> Self {
        let b = BaselineConfig::default();
        Self {
            minibatch: b.minibatch,
            max_attempts: b.max_attempts,
        }
    }
}

fn default_policy_architecture() -> Architecture {
    Architecture {
        hidden: vec![32, 32],
    }
}

fn default_critic_architecture() -> Architecture {
    Architecture {
        hidden: vec![64, 64],
    }
}

/// Everything a command needs, read from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    /// Overrides the environment's default horizon and discount.
    #[serde(default)]
    pub horizon: Option<HorizonConfig>,
    #[serde(default = "default_policy_architecture")]
    pub policy: Architecture,
    #[serde(default = "default_critic_architecture")]
    pub critic: Architecture,
    #[serde(default)]
    pub penalty: PenaltyBlock,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub repair: RepairBudgets,
    #[serde(default)]
    pub baseline: BaselineBudgets,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot load checkpoint: {0}")]
    Checkpoint(#[from] crate::neural::CheckpointError),
    #[error("checkpoint {path} does not fit the environment: {reason}")]
    ArchitectureMismatch { path: PathBuf, reason: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Repair(RepairError::BaselineExhausted { .. }) => EXIT_BASELINE_EXHAUSTED,
            _ => EXIT_CONFIG,
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl ToString) -> CliError {
    CliError::Invalid {
        field: field.into(),
        reason: reason.to_string(),
    }
}

fn check_architecture(field: &str, arch: &Architecture) -> Result<(), CliError> {
    if arch.hidden.is_empty() || arch.hidden.contains(&0) {
        return Err(invalid(
            format!("{field}.hidden"),
            "needs at least one layer, all widths >= 1",
        ));
    }
    Ok(())
}

fn check_penalty(field: &str, opt: &PenaltyConfig) -> Result<(), CliError> {
    opt.validate().map_err(|e| invalid(field, e))?;
    if !(opt.grad_clip > 0.0) {
        return Err(invalid(format!("{field}.grad_clip"), "must be > 0"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|source| CliError::ConfigParse {
                path: path.to_path_buf(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Checks every downstream precondition so commands fail before doing work.
    pub fn validate(&self) -> Result<(), CliError> {
        let env = make_env(&self.env).map_err(|e| invalid("env", e))?;
        if let Some(h) = &self.horizon {
            if h.horizon == 0 {
                return Err(invalid("horizon.horizon", "must be >= 1"));
            }
            if !(0.0..=1.0).contains(&h.discount) {
                return Err(invalid("horizon.discount", "must lie in [0, 1]"));
            }
        }
        check_architecture("policy", &self.policy)?;
        check_architecture("critic", &self.critic)?;
        check_penalty("penalty.policy", &self.penalty.policy)?;
        check_penalty("penalty.critic", &self.penalty.critic)?;
        check_penalty("penalty.baseline", &self.penalty.baseline)?;
        if self.penalty.policy.constraint_margin != self.penalty.critic.constraint_margin {
            return Err(invalid(
                "penalty.critic.constraint_margin",
                "must equal penalty.policy.constraint_margin",
            ));
        }
        let s = &self.search;
        if s.falsifier_budget == 0 {
            return Err(invalid("search.falsifier_budget", "must be >= 1"));
        }
        if !(s.grid_resolution > 0.0 && s.grid_resolution.is_finite()) {
            return Err(invalid(
                "search.grid_resolution",
                "must be positive and finite",
            ));
        }
        if !(s.dedup_radius >= 0.0 && s.dedup_radius.is_finite()) {
            return Err(invalid("search.dedup_radius", "must be finite and >= 0"));
        }
        grid_size(env.initial_box(), s.grid_resolution)
            .map_err(|e| invalid("search.grid_resolution", e))?;
        let r = &self.repair;
        for (name, value) in [
            ("repair.critic_rollouts", r.critic_rollouts),
            ("repair.minibatch", r.minibatch),
            ("repair.max_inner_iterations", r.max_inner_iterations),
            (
                "repair.witnesses_per_counterexample",
                r.witnesses_per_counterexample,
            ),
            ("repair.bptt_max_horizon", r.bptt_max_horizon),
            ("repair.evaluation_states", r.evaluation_states),
            ("baseline.minibatch", self.baseline.minibatch),
            ("baseline.max_attempts", self.baseline.max_attempts),
        ] {
            if value == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        let horizon = self.horizon_for(env.as_ref());
        if horizon.horizon > r.bptt_max_horizon {
            return Err(invalid(
                "horizon.horizon",
                format!("exceeds repair.bptt_max_horizon ({})", r.bptt_max_horizon),
            ));
        }
        Ok(())
    }

    pub fn horizon_for(&self, env: &dyn Environment) -> HorizonConfig {
        self.horizon.unwrap_or_else(|| env.default_horizon())
    }

    pub fn environment(&self) -> Result<Arc<dyn Environment>, CliError> {
        make_env(&self.env).map_err(|e| invalid("env", e))
    }

    pub fn repair_config(&self) -> RepairConfig {
        let r = &self.repair;
        RepairConfig {
            critic_rollouts: r.critic_rollouts,
            action_probes: r.action_probes,
            critic_batch: r.critic_batch,
            minibatch: r.minibatch,
            max_inner_iterations: r.max_inner_iterations,
            max_outer_iterations: r.max_outer_iterations,
            retain_unsafe_trajectories: r.retain_unsafe_trajectories,
            trajectory_anchors: r.trajectory_anchors,
            witnesses_per_counterexample: r.witnesses_per_counterexample,
            bptt_max_horizon: r.bptt_max_horizon,
            evaluation_states: r.evaluation_states,
            policy_solver: self.penalty.policy.clone(),
            critic_solver: self.penalty.critic.clone(),
            search: self.search.clone(),
            seed: self.seed,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            solver: self.penalty.baseline.clone(),
            minibatch: self.baseline.minibatch,
            max_attempts: self.baseline.max_attempts,
            bptt_max_horizon: self.repair.bptt_max_horizon.max(DEFAULT_BPTT_MAX_HORIZON),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "critic-repair",
    version,
    about = "Counterexample-guided repair of neural policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub policy: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RepairArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub policy: PathBuf,
    /// Starting critic; a fresh one is initialised when omitted.
    #[arg(long)]
    pub critic: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a return-only policy and check that it is unsafe.
    TrainBaseline(CommonArgs),
    /// Search for counterexamples by sampling and local descent.
    Falsify(PolicyArgs),
    /// Check every point of the initial-state grid.
    Verify(PolicyArgs),
    /// Run counterexample-guided repair.
    Repair(RepairArgs),
    /// Return and safety statistics over the evaluation states.
    Eval(PolicyArgs),
}

struct Context {
    config: RunConfig,
    env: Arc<dyn Environment>,
    horizon: HorizonConfig,
    out: PathBuf,
}

fn context(args: &CommonArgs) -> Result<Context, CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let env = config.environment()?;
    let horizon = config.horizon_for(env.as_ref());
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|source| CliError::Output {
        path: out.clone(),
        source,
    })?;
    Ok(Context {
        config,
        env,
        horizon,
        out,
    })
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let wrap = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, contents).map_err(wrap)?;
    fs::rename(&tmp, path).map_err(wrap)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialises");
    text.push('\n');
    text
}

fn to_json_lines<T: Serialize>(items: &[T]) -> String {
    let mut text = String::new();
    for item in items {
        writeln!(
            text,
            "{}",
            serde_json::to_string(item).expect("artifact serialises")
        )
        .unwrap();
    }
    text
}

/// Reads a JSON-lines file written by [`to_json_lines`].
pub fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| invalid(path.display().to_string(), e)))
        .collect()
}

fn load_network(
    path: &Path,
    env: &dyn Environment,
    input_dim: usize,
    output_dim: usize,
) -> Result<Network, CliError> {
    let net = Network::load(path)?;
    let mismatch = |reason: String| CliError::ArchitectureMismatch {
        path: path.to_path_buf(),
        reason,
    };
    if net.input_dim() != input_dim || net.output_dim() != output_dim {
        return Err(mismatch(format!(
            "network maps {} -> {}, environment `{}` needs {} -> {}",
            net.input_dim(),
            net.output_dim(),
            env.name(),
            input_dim,
            output_dim
        )));
    }
    Ok(net)
}

fn load_policy(ctx: &Context, path: &Path) -> Result<Network, CliError> {
    load_network(
        path,
        ctx.env.as_ref(),
        ctx.env.state_dim(),
        ctx.env.action_dim(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub attempts: usize,
    pub counterexamples: usize,
    pub mean_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub states: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub unsafe_states: usize,
    pub unsafe_fraction: f64,
    pub min_safety_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

pub fn cmd_train_baseline(args: &CommonArgs) -> Result<i32, CliError> {
    let ctx = context(args)?;
    let outcome = train_unsafe_baseline(
        ctx.env.as_ref(),
        &ctx.horizon,
        &ctx.config.policy.hidden,
        &ctx.config.baseline_config(),
        &ctx.config.search,
        ctx.config.seed,
    )?;
    write_atomic(
        &ctx.out.join(POLICY_FILE),
        &outcome.policy.to_checkpoint_json(),
    )?;
    write_atomic(
        &ctx.out.join(COUNTEREXAMPLES_FILE),
        &to_json_lines(&outcome.counterexamples),
    )?;
    let summary = BaselineSummary {
        attempts: outcome.attempts,
        counterexamples: outcome.counterexamples.len(),
        mean_objective: outcome.mean_objective,
    };
    write_atomic(&ctx.out.join(BASELINE_SUMMARY_FILE), &to_json(&summary))?;
    println!(
        "baseline: unsafe after {} attempt(s), {} counterexample(s) found",
        summary.attempts, summary.counterexamples
    );
    Ok(EXIT_OK)
}

pub fn cmd_falsify(args: &PolicyArgs) -> Result<i32, CliError> {
    let ctx = context(&args.common)?;
    let policy = load_policy(&ctx, &args.policy)?;
    let search = &ctx.config.search;
    let found = falsify(
        ctx.env.as_ref(),
        &policy,
        &ctx.horizon,
        search,
        search.falsifier_budget,
        seeds::derive_seed(ctx.config.seed, seeds::FALSIFIER),
    )?;
    write_atomic(&ctx.out.join(COUNTEREXAMPLES_FILE), &to_json_lines(&found))?;
    if found.is_empty() {
        println!(
            "falsify: no counterexample in {} samples",
            search.falsifier_budget
        );
        Ok(EXIT_OK)
    } else {
        println!("falsify: {} counterexample(s)", found.len());
        Ok(EXIT_COUNTEREXAMPLES)
    }
}

pub fn cmd_verify(args: &PolicyArgs) -> Result<i32, CliError> {
    let ctx = context(&args.common)?;
    let policy = load_policy(&ctx, &args.policy)?;
    let search = &ctx.config.search;
    let outcome = verify_grid(
        ctx.env.as_ref(),
        &policy,
        &ctx.horizon,
        search.grid_resolution,
        search.grid_cap,
        search.max_reported,
    )
    .map_err(|e| match e {
        SearchError::GridTooLarge { .. } | SearchError::InvalidResolution(_) => {
            invalid("search.grid_resolution", e)
        }
        other => CliError::Search(other),
    })?;
    write_atomic(
        &ctx.out.join(COUNTEREXAMPLES_FILE),
        &to_json_lines(&outcome.counterexamples),
    )?;
    write_atomic(&ctx.out.join(VERIFICATION_FILE), &to_json(&outcome))?;
    match outcome.verdict {
        Verdict::SafeOnGrid => {
            println!(
                "verify: safe on grid δ={} ({} states)",
                outcome.grid_resolution, outcome.states_checked
            );
            Ok(EXIT_OK)
        }
        Verdict::Unsafe => {
            println!(
                "verify: unsafe at {} of {} grid states (δ={})",
                outcome.unsafe_points, outcome.states_checked, outcome.grid_resolution
            );
            Ok(EXIT_COUNTEREXAMPLES)
        }
    }
}

pub fn cmd_repair(args: &RepairArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let ctx = context(&args.common)?;
    let env = ctx.env.as_ref();
    let policy = load_policy(&ctx, &args.policy)?;
    let critic = match &args.critic {
        Some(path) => load_network(path, env, env.state_dim() + env.action_dim(), 1)?,
        None => init_critic(
            env,
            &ctx.config.critic.hidden,
            seeds::derive_seed(ctx.config.seed, seeds::INIT),
        )
        .map_err(RepairError::from)?,
    };
    let settings = ctx.config.repair_config();
    let run = repair(env, &policy, &critic, &ctx.horizon, &settings, &mut |m| {
        eprintln!(
            "iteration {}: live {}, retained {}, mean return {:.4}, verdict {:?}",
            m.iteration, m.live_counterexamples, m.retained_set_size, m.mean_return, m.verdict
        );
    })?;
    write_atomic(&ctx.out.join(METRICS_FILE), &to_json_lines(&run.metrics))?;
    write_atomic(&ctx.out.join(REPORT_FILE), &to_json(&run.report))?;
    write_atomic(
        &ctx.out.join(REPAIRED_POLICY_FILE),
        &run.policy.to_checkpoint_json(),
    )?;
    write_atomic(&ctx.out.join(CRITIC_FILE), &run.critic.to_checkpoint_json())?;
    let live: Vec<Finding> = run
        .report
        .live_counterexamples
        .iter()
        .map(|s| {
            let traj = simulate(env, &run.policy, s, &ctx.horizon).map_err(RepairError::from)?;
            Ok(Finding {
                state: s.clone(),
                min_c: min_satisfaction(env, &traj),
            })
        })
        .collect::<Result<_, CliError>>()?;
    write_atomic(&ctx.out.join(COUNTEREXAMPLES_FILE), &to_json_lines(&live))?;
    write_atomic(
        &ctx.out.join(TIMING_FILE),
        &to_json(&Timing {
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        }),
    )?;
    if run.report.succeeded() {
        println!(
            "repair: safe on grid δ={} after {} outer iteration(s); mean return {:.4} -> {:.4}",
            run.report.final_verdict.grid_resolution,
            run.report.outer_iterations,
            run.report.mean_return_before,
            run.report.mean_return_after
        );
        Ok(EXIT_OK)
    } else {
        println!(
            "repair: budget exhausted after {} outer iteration(s) with {} live counterexample(s)",
            run.report.outer_iterations,
            run.report.live_counterexamples.len()
        );
        Ok(EXIT_BUDGET_EXHAUSTED)
    }
}

pub fn cmd_eval(args: &PolicyArgs) -> Result<i32, CliError> {
    let ctx = context(&args.common)?;
    let env = ctx.env.as_ref();
    let policy = load_policy(&ctx, &args.policy)?;
    let states = evaluation_states(env, ctx.config.repair.evaluation_states, ctx.config.seed);
    let mut returns = Vec::with_capacity(states.len());
    let mut safety = Vec::with_capacity(states.len());
    for s0 in &states {
        let traj = simulate(env, &policy, s0, &ctx.horizon).map_err(RepairError::from)?;
        returns.push(return_of(env, &traj, &ctx.horizon));
        safety.push(min_satisfaction(env, &traj));
    }
    let unsafe_states = safety.iter().filter(|v| **v < 0.0).count();
    let summary = EvalSummary {
        states: states.len(),
        mean_return: returns.iter().sum::<f64>() / states.len() as f64,
        min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
        max_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        unsafe_states,
        unsafe_fraction: unsafe_states as f64 / states.len() as f64,
        min_safety_value: safety.iter().copied().fold(f64::INFINITY, f64::min),
    };
    write_atomic(&ctx.out.join(EVAL_FILE), &to_json(&summary))?;
    println!(
        "eval: mean return {:.4} over {} states, {} unsafe",
        summary.mean_return, summary.states, summary.unsafe_states
    );
    Ok(EXIT_OK)
}

/// Dispatches a parsed command line and maps errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::TrainBaseline(args) => cmd_train_baseline(args),
        Command::Falsify(args) => cmd_falsify(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Repair(args) => cmd_repair(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
