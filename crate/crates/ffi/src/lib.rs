//! C ABI over the critic-repair library.
//!
//! Environments and networks are opaque heap handles released with their
//! `_free` function. Every fallible call returns a [`CrStatus`]; on failure a
//! message for the calling thread is available from [`cr_last_error`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString, OsString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use critic_repair::cli::{
    self, EXIT_BASELINE_EXHAUSTED, EXIT_BUDGET_EXHAUSTED, EXIT_COUNTEREXAMPLES, EXIT_OK,
};
use critic_repair::cmdp::safety_value;
use critic_repair::search::{verify_grid, Verdict};
use critic_repair::{make_env, EnvSpec, Environment, Network};
use libc::{c_char, c_int, size_t};

/// Status codes. Values 0 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    /// Invalid configuration, checkpoint, environment name or parameter.
    ConfigError = 1,
    BaselineExhausted = 2,
    /// The policy has counterexamples.
    Unsafe = 3,
    BudgetExhausted = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    DimensionMismatch = 12,
    Internal = 13,
}

/// Opaque environment handle.
pub struct CrEnv {
    inner: Arc<dyn Environment>,
}

/// Opaque network handle.
pub struct CrNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: CrStatus, message: impl Into<String>) -> CrStatus {
    set_error(message);
    status
}

/// Runs `body`, converting panics into `Internal`.
fn guard(body: impl FnOnce() -> CrStatus) -> CrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(CrStatus::Internal, "panic inside critic-repair"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CrStatus> {
    if p.is_null() {
        return Err(fail(CrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: size_t, what: &str) -> Result<&'a [f64], CrStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, CrStatus> {
    p.as_ref()
        .ok_or_else(|| fail(CrStatus::NullPointer, format!("{what} is null")))
}

fn check_policy(env: &dyn Environment, policy: &Network) -> Result<(), CrStatus> {
    if policy.input_dim() != env.state_dim() || policy.output_dim() != env.action_dim() {
        return Err(fail(
            CrStatus::DimensionMismatch,
            format!(
                "policy maps {} -> {} but {} needs {} -> {}",
                policy.input_dim(),
                policy.output_dim(),
                env.name(),
                env.state_dim(),
                env.action_dim()
            ),
        ));
    }
    Ok(())
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a built-in environment by name with `n` parameter overrides.
///
/// # Safety
/// `name` must be a NUL-terminated string; `keys` and `values` must point to
/// `n` entries each (may be null when `n` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_env_new(
    name: *const c_char,
    keys: *const *const c_char,
    values: *const f64,
    n: size_t,
    out: *mut *mut CrEnv,
) -> CrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CrStatus::NullPointer, "out is null");
        }
        let name = tri!(str_arg(name, "name"));
        let values = tri!(slice_arg(values, n, "values"));
        let mut parameters = BTreeMap::new();
        if n > 0 && keys.is_null() {
            return fail(CrStatus::NullPointer, "keys is null");
        }
        for (i, v) in values.iter().enumerate() {
            let key = tri!(str_arg(*keys.add(i), "parameter key"));
            parameters.insert(key.to_string(), *v);
        }
        let spec = EnvSpec {
            name: name.to_string(),
            parameters,
        };
        match make_env(&spec) {
            Ok(env) => {
                *out = Box::into_raw(Box::new(CrEnv { inner: env }));
                CrStatus::Ok
            }
            Err(e) => fail(CrStatus::ConfigError, e.to_string()),
        }
    })
}

/// # Safety
/// `env` must come from `cr_env_new` and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cr_env_free(env: *mut CrEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_env_state_dim(env: *const CrEnv) -> size_t {
    env.as_ref().map_or(0, |e| e.inner.state_dim())
}

/// Action dimension, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_env_action_dim(env: *const CrEnv) -> size_t {
    env.as_ref().map_or(0, |e| e.inner.action_dim())
}

/// Loads a network checkpoint from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_network_load(
    path: *const c_char,
    out: *mut *mut CrNetwork,
) -> CrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CrStatus::NullPointer, "out is null");
        }
        let path = tri!(str_arg(path, "path"));
        match Network::load(Path::new(path)) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CrNetwork { inner: net }));
                CrStatus::Ok
            }
            Err(e) => fail(CrStatus::ConfigError, format!("{path}: {e}")),
        }
    })
}

/// Parses a network checkpoint held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_network_from_json(
    json: *const c_char,
    out: *mut *mut CrNetwork,
) -> CrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CrStatus::NullPointer, "out is null");
        }
        let json = tri!(str_arg(json, "json"));
        match Network::from_checkpoint_json(json) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CrNetwork { inner: net }));
                CrStatus::Ok
            }
            Err(e) => fail(CrStatus::ConfigError, e.to_string()),
        }
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cr_network_free(net: *mut CrNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_network_input_dim(net: *const CrNetwork) -> size_t {
    net.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// Output dimension, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_network_output_dim(net: *const CrNetwork) -> size_t {
    net.as_ref().map_or(0, |n| n.inner.output_dim())
}

/// Evaluates the network; `output_len` must equal the output dimension.
///
/// # Safety
/// `input` must hold `input_len` values and `output` room for `output_len`.
#[no_mangle]
pub unsafe extern "C" fn cr_network_forward(
    net: *const CrNetwork,
    input: *const f64,
    input_len: size_t,
    output: *mut f64,
    output_len: size_t,
) -> CrStatus {
    guard(|| {
        let net = tri!(handle(net, "net"));
        let input = tri!(slice_arg(input, input_len, "input"));
        if output.is_null() {
            return fail(CrStatus::NullPointer, "output is null");
        }
        if input_len != net.inner.input_dim() || output_len != net.inner.output_dim() {
            return fail(
                CrStatus::DimensionMismatch,
                format!(
                    "network maps {} -> {}, got {input_len} -> {output_len}",
                    net.inner.input_dim(),
                    net.inner.output_dim()
                ),
            );
        }
        match net.inner.forward(input) {
            Ok(y) => {
                std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(&y);
                CrStatus::Ok
            }
            Err(e) => fail(CrStatus::Internal, e.to_string()),
        }
    })
}

/// Minimum satisfaction along the rollout from `s0` over the environment's
/// default horizon. Returns `Ok` with the value in `out` whatever its sign.
///
/// # Safety
/// Handles must be live, `s0` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_safety_value(
    env: *const CrEnv,
    policy: *const CrNetwork,
    s0: *const f64,
    len: size_t,
    out: *mut f64,
) -> CrStatus {
    guard(|| {
        let env = tri!(handle(env, "env"));
        let policy = tri!(handle(policy, "policy"));
        let s0 = tri!(slice_arg(s0, len, "s0"));
        if out.is_null() {
            return fail(CrStatus::NullPointer, "out is null");
        }
        tri!(check_policy(env.inner.as_ref(), &policy.inner));
        if len != env.inner.state_dim() {
            return fail(
                CrStatus::DimensionMismatch,
                format!(
                    "state has {len} entries, expected {}",
                    env.inner.state_dim()
                ),
            );
        }
        let cfg = env.inner.default_horizon();
        match safety_value(env.inner.as_ref(), &policy.inner, s0, &cfg) {
            Ok(v) => {
                *out = v;
                CrStatus::Ok
            }
            Err(e) => fail(CrStatus::Internal, e.to_string()),
        }
    })
}

/// Checks every grid point of the initial box at `resolution`. Returns `Ok`
/// when all are safe and `Unsafe` otherwise; the counts are written either way.
///
/// # Safety
/// Handles must be live; the count pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn cr_verify_grid(
    env: *const CrEnv,
    policy: *const CrNetwork,
    resolution: f64,
    grid_cap: size_t,
    states_checked: *mut size_t,
    unsafe_points: *mut size_t,
) -> CrStatus {
    guard(|| {
        let env = tri!(handle(env, "env"));
        let policy = tri!(handle(policy, "policy"));
        tri!(check_policy(env.inner.as_ref(), &policy.inner));
        let cfg = env.inner.default_horizon();
        match verify_grid(
            env.inner.as_ref(),
            &policy.inner,
            &cfg,
            resolution,
            grid_cap,
            0,
        ) {
            Ok(outcome) => {
                if !states_checked.is_null() {
                    *states_checked = outcome.states_checked;
                }
                if !unsafe_points.is_null() {
                    *unsafe_points = outcome.unsafe_points;
                }
                if outcome.verdict == Verdict::SafeOnGrid {
                    CrStatus::Ok
                } else {
                    CrStatus::Unsafe
                }
            }
            Err(e) => fail(CrStatus::ConfigError, e.to_string()),
        }
    })
}

fn status_of_exit(code: i32) -> CrStatus {
    match code {
        EXIT_OK => CrStatus::Ok,
        EXIT_COUNTEREXAMPLES => CrStatus::Unsafe,
        EXIT_BUDGET_EXHAUSTED => CrStatus::BudgetExhausted,
        EXIT_BASELINE_EXHAUSTED => CrStatus::BaselineExhausted,
        _ => CrStatus::ConfigError,
    }
}

/// Runs the `repair` subcommand and writes its files into `out_dir`.
/// `critic` may be null to start from a fresh critic.
///
/// # Safety
/// The non-null arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cr_repair(
    config: *const c_char,
    policy: *const c_char,
    critic: *const c_char,
    out_dir: *const c_char,
) -> CrStatus {
    guard(|| {
        let mut args: Vec<OsString> = vec!["critic-repair".into(), "repair".into()];
        args.extend(["--config".into(), tri!(str_arg(config, "config")).into()]);
        args.extend(["--policy".into(), tri!(str_arg(policy, "policy")).into()]);
        if !critic.is_null() {
            args.extend(["--critic".into(), tri!(str_arg(critic, "critic")).into()]);
        }
        args.extend(["--out".into(), tri!(str_arg(out_dir, "out_dir")).into()]);
        let status = status_of_exit(cli::main_with_args(args));
        if status != CrStatus::Ok {
            set_error(format!("repair finished with status {status:?}"));
        }
        status
    })
}

/// Runs the command-line front end with `argv[0..argc]` and returns its exit
/// code. `argv[0]` is the program name.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cr_cli_main(argc: c_int, argv: *const *const c_char) -> c_int {
    if argc < 0 || (argc > 0 && argv.is_null()) {
        set_error("argv is null");
        return CrStatus::NullPointer as c_int;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        match str_arg(*argv.add(i), "argv entry") {
            Ok(s) => args.push(OsString::from(s)),
            Err(status) => return status as c_int,
        }
    }
    match catch_unwind(|| cli::main_with_args(args)) {
        Ok(code) => code,
        Err(_) => {
            set_error("panic inside critic-repair");
            CrStatus::Internal as c_int
        }
    }
}
