//! Built-in benchmark environments and the name registry used by configs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{BoxSet, Environment, HorizonConfig, State};
use crate::neural::InputNormalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

impl EnvSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            parameters: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}` (known: thermostat, pointmass)")]
    UnknownEnvironment(String),
    #[error("unknown parameter `{key}` for environment `{env}`")]
    UnknownParameter { env: String, key: String },
    #[error("invalid parameters for `{env}`: {reason}")]
    InvalidParameters { env: String, reason: String },
}

pub const REGISTERED: [&str; 2] = ["thermostat", "pointmass"];

pub fn make_env(spec: &EnvSpec) -> Result<Arc<dyn Environment>, EnvError> {
    match spec.name.as_str() {
        "thermostat" => Ok(Arc::new(make_thermostat(&spec.parameters)?)),
        "pointmass" => Ok(Arc::new(make_pointmass(&spec.parameters)?)),
        other => Err(EnvError::UnknownEnvironment(other.to_string())),
    }
}

/// Overwrites `defaults` with `params`, rejecting keys that are not present.
fn apply_overrides(
    env: &str,
    defaults: &mut BTreeMap<&'static str, f64>,
    params: &BTreeMap<String, f64>,
) -> Result<(), EnvError> {
    for (key, value) in params {
        match defaults.get_mut(key.as_str()) {
            Some(slot) => *slot = *value,
            None => {
                return Err(EnvError::UnknownParameter {
                    env: env.to_string(),
                    key: key.clone(),
                })
            }
        }
    }
    if let Some((key, _)) = defaults.iter().find(|(_, v)| !v.is_finite()) {
        return Err(invalid(env, format!("`{key}` must be finite")));
    }
    Ok(())
}

fn invalid(env: &str, reason: impl Into<String>) -> EnvError {
    EnvError::InvalidParameters {
        env: env.to_string(),
        reason: reason.into(),
    }
}

fn horizon_from(env: &str, horizon: f64, discount: f64) -> Result<HorizonConfig, EnvError> {
    if horizon < 1.0 || horizon.fract() != 0.0 {
        return Err(invalid(env, "`horizon` must be a positive integer"));
    }
    HorizonConfig::new(horizon as usize, discount).map_err(|e| invalid(env, e.to_string()))
}

/// One-dimensional room temperature control.
///
/// `x' = x + gain * u`, reward `-(x - target)^2 - action_cost * u^2`,
/// safe band `[band_low, band_high]` with `c(x) = min(x - band_low, band_high - x)`.
#[derive(Debug, Clone)]
pub struct Thermostat {
    pub gain: f64,
    pub target: f64,
    pub action_cost: f64,
    pub band_low: f64,
    pub band_high: f64,
    actions: BoxSet,
    initial: BoxSet,
    horizon: HorizonConfig,
}

impl Default for Thermostat {
    fn default() -> Self {
        make_thermostat(&BTreeMap::new()).expect("default thermostat parameters are valid")
    }
}

pub fn make_thermostat(params: &BTreeMap<String, f64>) -> Result<Thermostat, EnvError> {
    const NAME: &str = "thermostat";
    let mut p: BTreeMap<&'static str, f64> = [
        ("gain", 0.5),
        ("target", 23.0),
        ("action_cost", 0.01),
        ("band_low", 15.0),
        ("band_high", 25.0),
        ("initial_low", 18.0),
        ("initial_high", 22.0),
        ("action_limit", 1.0),
        ("horizon", 20.0),
        ("discount", 0.99),
    ]
    .into_iter()
    .collect();
    apply_overrides(NAME, &mut p, params)?;

    if !(p["band_low"] < p["band_high"]) {
        return Err(invalid(
            NAME,
            "safe band is empty (need band_low < band_high)",
        ));
    }
    if !(p["initial_low"] <= p["initial_high"]) {
        return Err(invalid(NAME, "initial_low must not exceed initial_high"));
    }
    if p["initial_low"] < p["band_low"] || p["initial_high"] > p["band_high"] {
        return Err(invalid(
            NAME,
            "initial states must lie inside the safe band",
        ));
    }
    if !(p["action_limit"] > 0.0) {
        return Err(invalid(NAME, "action_limit must be positive"));
    }
    if p["action_cost"] < 0.0 {
        return Err(invalid(NAME, "action_cost must be non-negative"));
    }
    let horizon = horizon_from(NAME, p["horizon"], p["discount"])?;
    Ok(Thermostat {
        gain: p["gain"],
        target: p["target"],
        action_cost: p["action_cost"],
        band_low: p["band_low"],
        band_high: p["band_high"],
        actions: BoxSet::new(vec![-p["action_limit"]], vec![p["action_limit"]]),
        initial: BoxSet::new(vec![p["initial_low"]], vec![p["initial_high"]]),
        horizon,
    })
}

impl Environment for Thermostat {
    fn name(&self) -> &str {
        "thermostat"
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
        self.horizon
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> State {
        vec![state[0] + self.gain * action[0]]
    }

    fn transition_jacobians(&self, _state: &[f64], _action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0], vec![self.gain])
    }

    fn reward(&self, state: &[f64], action: &[f64]) -> f64 {
        let err = state[0] - self.target;
        -err * err - self.action_cost * action[0] * action[0]
    }

    fn reward_gradients(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-2.0 * (state[0] - self.target)],
            vec![-2.0 * self.action_cost * action[0]],
        )
    }

    fn satisfaction(&self, state: &[f64]) -> f64 {
        (state[0] - self.band_low).min(self.band_high - state[0])
    }

    fn state_normalization(&self) -> InputNormalization {
        if (self.band_high - self.band_low) < 1e6 {
            InputNormalization::for_box(&[self.band_low], &[self.band_high])
        } else {
            InputNormalization::for_box(&self.initial.low, &self.initial.high)
        }
    }
}

/// Planar point mass steering to a goal past a circular obstacle.
///
/// State `(px, py, vx, vy)`; `v' = damping * v + accel_gain * a`,
/// `p' = p + dt * v'`; reward `-|p - goal|^2`;
/// `c(s) = |p - obstacle| - obstacle_radius`.
#[derive(Debug, Clone)]
pub struct PointMass {
    pub goal: [f64; 2],
    pub obstacle: [f64; 2],
    pub obstacle_radius: f64,
    pub damping: f64,
    pub accel_gain: f64,
    pub dt: f64,
    actions: BoxSet,
    initial: BoxSet,
    horizon: HorizonConfig,
}

impl Default for PointMass {
    fn default() -> Self {
        make_pointmass(&BTreeMap::new()).expect("default pointmass parameters are valid")
    }
}

pub fn make_pointmass(params: &BTreeMap<String, f64>) -> Result<PointMass, EnvError> {
    const NAME: &str = "pointmass";
    let mut p: BTreeMap<&'static str, f64> = [
        ("goal_x", 1.0),
        ("goal_y", 1.0),
        ("obstacle_x", 0.5),
        ("obstacle_y", 0.5),
        ("obstacle_radius", 0.2),
        ("damping", 0.95),
        ("accel_gain", 0.1),
        ("dt", 0.1),
        ("initial_low", 0.0),
        ("initial_high", 0.2),
        ("action_limit", 1.0),
        ("horizon", 40.0),
        ("discount", 0.99),
    ]
    .into_iter()
    .collect();
    apply_overrides(NAME, &mut p, params)?;

    if !(p["obstacle_radius"] > 0.0) {
        return Err(invalid(NAME, "obstacle_radius must be positive"));
    }
    if !(p["dt"] > 0.0) || !(p["action_limit"] > 0.0) {
        return Err(invalid(NAME, "dt and action_limit must be positive"));
    }
    if !(p["initial_low"] <= p["initial_high"]) {
        return Err(invalid(NAME, "initial_low must not exceed initial_high"));
    }
    // Initial positions must all be safe: nearest point of the box to the
    // obstacle centre has to lie outside the disc.
    let nearest = |centre: f64| centre.clamp(p["initial_low"], p["initial_high"]);
    let dx = nearest(p["obstacle_x"]) - p["obstacle_x"];
    let dy = nearest(p["obstacle_y"]) - p["obstacle_y"];
    if (dx * dx + dy * dy).sqrt() < p["obstacle_radius"] {
        return Err(invalid(
            NAME,
            "initial position box intersects the obstacle",
        ));
    }
    let horizon = horizon_from(NAME, p["horizon"], p["discount"])?;
    let (lo, hi) = (p["initial_low"], p["initial_high"]);
    Ok(PointMass {
        goal: [p["goal_x"], p["goal_y"]],
        obstacle: [p["obstacle_x"], p["obstacle_y"]],
        obstacle_radius: p["obstacle_radius"],
        damping: p["damping"],
        accel_gain: p["accel_gain"],
        dt: p["dt"],
        actions: BoxSet::new(vec![-p["action_limit"]; 2], vec![p["action_limit"]; 2]),
        initial: BoxSet::new(vec![lo, lo, 0.0, 0.0], vec![hi, hi, 0.0, 0.0]),
        horizon,
    })
}

impl Environment for PointMass {
    fn name(&self) -> &str {
        "pointmass"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_box(&self) -> &BoxSet {
        &self.actions
    }

    fn initial_box(&self) -> &BoxSet {
        &self.initial
    }

    fn default_horizon(&self) -> HorizonConfig {
        self.horizon
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> State {
        let vx = self.damping * state[2] + self.accel_gain * action[0];
        let vy = self.damping * state[3] + self.accel_gain * action[1];
        vec![state[0] + self.dt * vx, state[1] + self.dt * vy, vx, vy]
    }

    fn transition_jacobians(&self, _state: &[f64], _action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, g, dt) = (self.damping, self.accel_gain, self.dt);
        #[rustfmt::skip]
        let d_state = vec![
            1.0, 0.0, dt * d, 0.0,
            0.0, 1.0, 0.0, dt * d,
            0.0, 0.0, d, 0.0,
            0.0, 0.0, 0.0, d,
        ];
        #[rustfmt::skip]
        let d_action = vec![
            dt * g, 0.0,
            0.0, dt * g,
            g, 0.0,
            0.0, g,
        ];
        (d_state, d_action)
    }

    fn reward(&self, state: &[f64], _action: &[f64]) -> f64 {
        let dx = state[0] - self.goal[0];
        let dy = state[1] - self.goal[1];
        -(dx * dx + dy * dy)
    }

    fn reward_gradients(&self, state: &[f64], _action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            vec![
                -2.0 * (state[0] - self.goal[0]),
                -2.0 * (state[1] - self.goal[1]),
                0.0,
                0.0,
            ],
            vec![0.0, 0.0],
        )
    }

    fn satisfaction(&self, state: &[f64]) -> f64 {
        let dx = state[0] - self.obstacle[0];
        let dy = state[1] - self.obstacle[1];
        (dx * dx + dy * dy).sqrt() - self.obstacle_radius
    }

    fn state_normalization(&self) -> InputNormalization {
        // positions centred between the start region and the goal
        let mut shift = vec![0.0; 4];
        let mut scale = vec![1.0; 4];
        for k in 0..2 {
            let start = 0.5 * (self.initial.low[k] + self.initial.high[k]);
            shift[k] = 0.5 * (start + self.goal[k]);
            scale[k] = 1.0 / (0.5 * (self.goal[k] - start).abs()).max(0.1);
        }
        InputNormalization::new(shift, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::validate_environment;

    #[test]
    fn thermostat_by_hand() {
        let env = Thermostat::default();
        assert_eq!(env.satisfaction(&[15.0]), 0.0);
        assert_eq!(env.satisfaction(&[20.0]), 5.0);
        assert_eq!(env.transition(&[24.0], &[1.0]), vec![24.5]);
        assert_eq!(env.default_horizon(), HorizonConfig::new(20, 0.99).unwrap());
        validate_environment(&env).unwrap();
    }

    #[test]
    fn pointmass_by_hand() {
        let env = PointMass::default();
        assert!(env.satisfaction(&[0.5, 0.7, 0.0, 0.0]).abs() < 1e-15);
        assert!((env.satisfaction(&[0.0, 0.0, 0.0, 0.0]) - 0.507_106_781_186_547_5).abs() < 1e-12);
        let next = env.transition(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]);
        assert!((next[2] - 0.1).abs() < 1e-15 && next[3] == 0.0);
        assert!((next[0] - 0.01).abs() < 1e-15 && next[1] == 0.0);
        assert_eq!(env.default_horizon(), HorizonConfig::new(40, 0.99).unwrap());
        validate_environment(&env).unwrap();
    }

    #[test]
    fn registry_resolves_and_rejects() {
        assert_eq!(
            make_env(&EnvSpec::named("thermostat")).unwrap().name(),
            "thermostat"
        );
        assert_eq!(
            make_env(&EnvSpec::named("pointmass")).unwrap().state_dim(),
            4
        );
        assert!(matches!(
            make_env(&EnvSpec::named("cartpole")),
            Err(EnvError::UnknownEnvironment(_))
        ));
        let mut spec = EnvSpec::named("thermostat");
        spec.parameters.insert("mass".into(), 1.0);
        assert!(matches!(
            make_env(&spec),
            Err(EnvError::UnknownParameter { .. })
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let params =
            |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert!(make_thermostat(&params(&[("band_low", 26.0)])).is_err());
        assert!(make_thermostat(&params(&[("horizon", 0.0)])).is_err());
        assert!(make_thermostat(&params(&[("initial_high", 30.0)])).is_err());
        assert!(make_pointmass(&params(&[("obstacle_radius", -1.0)])).is_err());
        assert!(make_pointmass(&params(&[("initial_high", 0.45)])).is_err());
        let wide =
            make_thermostat(&params(&[("initial_low", 18.0), ("initial_high", 24.0)])).unwrap();
        assert_eq!(wide.initial_box().high, vec![24.0]);
    }
}
