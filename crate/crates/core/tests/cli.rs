use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use critic_repair::cli::{read_json_lines, BaselineSummary, EvalSummary};
use critic_repair::neural::Network;
use critic_repair::repair::{init_policy, IterationMetrics, RepairReport};
use critic_repair::search::{Finding, VerificationOutcome};
use critic_repair::{make_env, EnvSpec};
use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critic-repair"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn zero_policy(dir: &Path, env: &str) -> PathBuf {
    let env = make_env(&EnvSpec::named(env)).unwrap();
    let net = init_policy(env.as_ref(), &[32, 32], 0).unwrap();
    let zero = net.with_params(vec![0.0; net.num_params()]).unwrap();
    let path = dir.join("zero.json");
    fs::write(&path, zero.to_checkpoint_json()).unwrap();
    path
}

const THERMOSTAT: &str = r#"{ "env": { "name": "thermostat" }, "seed": 0 }"#;

#[test]
fn missing_config_exits_1_with_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    let out = cli(&[
        "train-baseline",
        "--config",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));
}

#[test]
fn zero_horizon_exits_1_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{ "env": { "name": "thermostat" }, "horizon": { "horizon": 0, "discount": 0.99 } }"#,
    );
    let out = cli(&[
        "train-baseline",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("horizon.horizon"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_exit_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{ "env": { "name": "thermostat" }, "speed": 3 }"#,
    );
    let out = cli(&[
        "train-baseline",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("speed"), "{}", stderr(&out));
}

#[test]
fn zero_policy_is_clean_under_falsify_and_verify() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", THERMOSTAT);
    let policy = zero_policy(dir.path(), "thermostat");
    let out = cli(&[
        "falsify",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let found: Vec<Finding> = read_json_lines(&dir.path().join("counterexamples.jsonl")).unwrap();
    assert!(found.is_empty());

    let out = cli(&[
        "verify",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("safe on grid δ=0.1"));
    let outcome: VerificationOutcome =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verification.json")).unwrap())
            .unwrap();
    assert_eq!(outcome.states_checked, 41);
}

#[test]
fn baseline_checkpoint_is_flagged_unsafe() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", THERMOSTAT);
    let out = cli(&[
        "train-baseline",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let policy = dir.path().join("policy.json");
    assert!(Network::load(&policy).is_ok());
    let summary: BaselineSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("baseline.json")).unwrap())
            .unwrap();
    assert!(summary.counterexamples >= 1);

    for command in ["falsify", "verify"] {
        let out = cli(&[
            command,
            "--config",
            s(&cfg),
            "--policy",
            s(&policy),
            "--out",
            s(dir.path()),
        ]);
        assert_eq!(code(&out), 3, "{command}: {}", stderr(&out));
        let found: Vec<Finding> =
            read_json_lines(&dir.path().join("counterexamples.jsonl")).unwrap();
        assert!(!found.is_empty());
        assert!(found.iter().all(|f| f.min_c < 0.0));
    }

    let out = cli(&[
        "eval",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let eval: EvalSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval.states, 64);
    assert!(eval.unsafe_states >= 1 && eval.min_safety_value < 0.0);
}

#[test]
fn grid_above_the_cap_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{ "env": { "name": "thermostat" }, "search": { "grid_resolution": 0.1, "grid_cap": 10 } }"#,
    );
    let policy = zero_policy(dir.path(), "thermostat");
    let out = cli(&[
        "verify",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("search.grid_resolution"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn checkpoint_for_another_environment_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", THERMOSTAT);
    let policy = zero_policy(dir.path(), "pointmass");
    let out = cli(&[
        "falsify",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("zero.json"), "{}", stderr(&out));
}

#[test]
fn starved_repair_budget_exits_4_and_lists_live_counterexamples() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{
            "env": { "name": "thermostat" },
            "penalty": { "policy": { "learning_rate": 1e-4, "inner_steps": 2, "max_penalty_rounds": 1 } },
            "repair": { "max_outer_iterations": 1, "max_inner_iterations": 1 },
            "seed": 0
        }"#,
    );
    assert_eq!(
        code(&cli(&[
            "train-baseline",
            "--config",
            s(&cfg),
            "--out",
            s(dir.path())
        ])),
        0
    );
    let policy = dir.path().join("policy.json");
    let out = cli(&[
        "repair",
        "--config",
        s(&cfg),
        "--policy",
        s(&policy),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let report: RepairReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(!report.succeeded());
    assert!(!report.live_counterexamples.is_empty());
    assert_eq!(report.outer_iterations, 1);
    let live: Vec<Finding> = read_json_lines(&dir.path().join("counterexamples.jsonl")).unwrap();
    assert_eq!(live.len(), report.live_counterexamples.len());
    assert!(live.iter().all(|f| f.min_c < 0.0));
    let metrics: Vec<IterationMetrics> =
        read_json_lines(&dir.path().join("metrics.jsonl")).unwrap();
    assert!(!metrics.is_empty());
    for name in ["policy_repaired.json", "critic.json"] {
        assert!(Network::load(&dir.path().join(name)).is_ok(), "{name}");
    }
}

#[test]
fn emitted_documents_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", THERMOSTAT);
    assert_eq!(
        code(&cli(&[
            "train-baseline",
            "--config",
            s(&cfg),
            "--out",
            s(dir.path())
        ])),
        0
    );
    let out = cli(&[
        "repair",
        "--config",
        s(&cfg),
        "--policy",
        s(&dir.path().join("policy.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let metrics_text = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let metrics: Vec<IterationMetrics> =
        read_json_lines(&dir.path().join("metrics.jsonl")).unwrap();
    let rewritten: String = metrics
        .iter()
        .map(|m| serde_json::to_string(m).unwrap() + "\n")
        .collect();
    assert_eq!(rewritten, metrics_text);

    let report_text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: RepairReport = serde_json::from_str(&report_text).unwrap();
    assert_eq!(
        serde_json::to_string_pretty(&report).unwrap().trim_end(),
        report_text.trim_end()
    );
    assert!(report.succeeded());

    let policy_text = fs::read_to_string(dir.path().join("policy_repaired.json")).unwrap();
    let policy = Network::from_checkpoint_json(&policy_text).unwrap();
    assert_eq!(policy.to_checkpoint_json(), policy_text);
}

#[test]
fn baseline_retry_exhaustion_exits_2() {
    // A band no bounded rollout can leave: every trained policy is safe.
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{
            "env": { "name": "thermostat", "parameters": { "band_low": -1000.0, "band_high": 1000.0 } },
            "baseline": { "max_attempts": 2 }
        }"#,
    );
    let out = cli(&[
        "train-baseline",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!dir.path().join("policy.json").exists());
}
