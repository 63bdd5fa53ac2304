//! Dense tanh networks over a flat parameter vector, their exact gradients,
//! backpropagation through time across environment steps, and the JSON
//! checkpoint format.
//!
//! Parameter layout: for every layer, the `fan_out x fan_in` weight matrix in
//! row-major order followed by the `fan_out` biases. Hidden layers apply
//! `tanh`; the last layer applies the configured [`OutputTransform`].

use std::fmt;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cmdp::{check_policy_shape, CmdpError, Environment, HorizonConfig};
use crate::seeds;

/// `box_squash` maps onto a slightly shrunken box so that outputs stay
/// strictly inside the bounds even when `tanh` saturates to exactly 1.
const SQUASH_SHRINK: f64 = 1.0 - 1e-9;

pub const DEFAULT_BPTT_MAX_HORIZON: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputTransform {
    Affine,
    BoxSquash { low: Vec<f64>, high: Vec<f64> },
}

/// Fixed affine rescaling applied to inputs before the first layer:
/// `(x - shift) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalization {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Self {
        Self { shift, scale }
    }

    /// Centre of the box and `2 / width` per axis; degenerate axes get scale 1.
    pub fn for_box(low: &[f64], high: &[f64]) -> Self {
        Self {
            shift: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            scale: low
                .iter()
                .zip(high)
                .map(|(l, h)| if h > l { 2.0 / (h - l) } else { 1.0 })
                .collect(),
        }
    }

    pub fn concat(&self, other: &InputNormalization) -> Self {
        Self {
            shift: self.shift.iter().chain(&other.shift).copied().collect(),
            scale: self.scale.iter().chain(&other.scale).copied().collect(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("input has dimension {found}, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter vector has length {found}, architecture needs {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
}

/// Hex digest identifying a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_transform: OutputTransform,
    params: Vec<f64>,
    seed: u64,
    input_normalization: Option<InputNormalization>,
    offsets: Vec<usize>,
}

/// Intermediate values of one forward pass, consumed by [`Network::backprop`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layer_inputs: Vec<Vec<f64>>,
    pre_output: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_sizes.len());
    let mut at = 0;
    offsets.push(0);
    for w in layer_sizes.windows(2) {
        at += (w[0] + 1) * w[1];
        offsets.push(at);
    }
    offsets
}

fn validate_architecture(
    layer_sizes: &[usize],
    transform: &OutputTransform,
) -> Result<(), NetworkError> {
    if layer_sizes.len() < 2 {
        return Err(NetworkError::InvalidArchitecture(
            "need at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(NetworkError::InvalidArchitecture(
            "layer sizes must be positive".into(),
        ));
    }
    if let OutputTransform::BoxSquash { low, high } = transform {
        let out = *layer_sizes.last().unwrap();
        if low.len() != out || high.len() != out {
            return Err(NetworkError::InvalidArchitecture(format!(
                "box_squash bounds have dimension {}/{}, output has {out}",
                low.len(),
                high.len()
            )));
        }
        if low.iter().zip(high).any(|(lo, hi)| !(lo < hi)) {
            return Err(NetworkError::InvalidArchitecture(
                "box_squash bounds need low < high".into(),
            ));
        }
    }
    Ok(())
}

impl Network {
    pub fn from_params(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_transform: OutputTransform,
        params: Vec<f64>,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        validate_architecture(&layer_sizes, &output_transform)?;
        let expected = param_count(&layer_sizes);
        if params.len() != expected {
            return Err(NetworkError::ParamCount {
                expected,
                found: params.len(),
            });
        }
        let offsets = layer_offsets(&layer_sizes);
        Ok(Self {
            layer_sizes,
            activation,
            output_transform,
            params,
            seed,
            input_normalization: None,
            offsets,
        })
    }

    /// Attach a fixed input rescaling.
    pub fn with_input_normalization(
        mut self,
        norm: InputNormalization,
    ) -> Result<Self, NetworkError> {
        if norm.shift.len() != self.input_dim() || norm.scale.len() != self.input_dim() {
            return Err(NetworkError::InvalidArchitecture(format!(
                "input normalisation has dimension {}/{}, input has {}",
                norm.shift.len(),
                norm.scale.len(),
                self.input_dim()
            )));
        }
        if norm.shift.iter().chain(&norm.scale).any(|v| !v.is_finite()) {
            return Err(NetworkError::InvalidArchitecture(
                "input normalisation must be finite".into(),
            ));
        }
        self.input_normalization = Some(norm);
        Ok(self)
    }

    pub fn input_normalization(&self) -> Option<&InputNormalization> {
        self.input_normalization.as_ref()
    }

    /// All weights and biases zero.
    ///
    /// # Panics
    /// On an invalid architecture.
    pub fn zeros(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_transform: OutputTransform,
    ) -> Self {
        let n = param_count(&layer_sizes);
        Self::from_params(layer_sizes, activation, output_transform, vec![0.0; n], 0)
            .expect("invalid architecture")
    }

    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn seeded(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_transform: OutputTransform,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        validate_architecture(&layer_sizes, &output_transform)?;
        let mut rng = seeds::rng(seed);
        let mut params = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.gen_range(-bound..=bound));
            }
        }
        Self::from_params(layer_sizes, activation, output_transform, params, seed)
    }

    /// A squashed-output policy `state -> action` with the given hidden widths.
    pub fn policy(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_low.len());
        Self::seeded(
            sizes,
            Activation::Tanh,
            OutputTransform::BoxSquash {
                low: action_low.to_vec(),
                high: action_high.to_vec(),
            },
            seed,
        )
    }

    /// A scalar affine-output critic.
    pub fn critic(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self, NetworkError> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::seeded(sizes, Activation::Tanh, OutputTransform::Affine, seed)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> &OutputTransform {
        &self.output_transform
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, NetworkError> {
        if params.len() != self.params.len() {
            return Err(NetworkError::ParamCount {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        let mut net = self.clone();
        net.params = params;
        Ok(net)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for n in &self.layer_sizes {
            hasher.update((*n as u64).to_le_bytes());
        }
        for p in &self.params {
            hasher.update(p.to_bits().to_le_bytes());
        }
        if let Some(norm) = &self.input_normalization {
            for v in norm.shift.iter().chain(&norm.scale) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        Fingerprint(hex::encode(&hasher.finalize()[..16]))
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NetworkError> {
        if input.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(self.trace(input)?.output)
    }

    /// Forward pass keeping everything backprop needs.
    pub fn trace(&self, input: &[f64]) -> Result<ForwardTrace, NetworkError> {
        self.check_input(input)?;
        let layers = self.layer_sizes.len() - 1;
        let mut layer_inputs = Vec::with_capacity(layers);
        let mut current = match &self.input_normalization {
            Some(norm) => input
                .iter()
                .zip(norm.shift.iter().zip(&norm.scale))
                .map(|(x, (shift, scale))| (x - shift) * scale)
                .collect(),
            None => input.to_vec(),
        };
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &self.params[self.offsets[l]..self.offsets[l] + fan_in * fan_out];
            let biases = &self.params[self.offsets[l] + fan_in * fan_out..self.offsets[l + 1]];
            let mut z = biases.to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &weights[j * fan_in..(j + 1) * fan_in];
                *zj += row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
            }
            layer_inputs.push(current);
            if l + 1 < layers {
                match self.activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            current = z;
        }
        let pre_output = current;
        let output = match &self.output_transform {
            OutputTransform::Affine => pre_output.clone(),
            OutputTransform::BoxSquash { low, high } => pre_output
                .iter()
                .zip(low.iter().zip(high))
                .map(|(z, (lo, hi))| {
                    let mid = 0.5 * (lo + hi);
                    let half = 0.5 * (hi - lo) * SQUASH_SHRINK;
                    mid + half * z.tanh()
                })
                .collect(),
        };
        Ok(ForwardTrace {
            layer_inputs,
            pre_output,
            output,
        })
    }

    /// Vector-Jacobian product through a recorded forward pass.
    ///
    /// Adds `d_output^T * d(output)/d(params)` into `d_params` and returns
    /// `d_output^T * d(output)/d(input)`.
    pub fn backprop(
        &self,
        trace: &ForwardTrace,
        d_output: &[f64],
        d_params: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(d_params.len(), self.params.len());
        let mut delta: Vec<f64> = match &self.output_transform {
            OutputTransform::Affine => d_output.to_vec(),
            OutputTransform::BoxSquash { low, high } => d_output
                .iter()
                .zip(&trace.pre_output)
                .zip(low.iter().zip(high))
                .map(|((g, z), (lo, hi))| {
                    let t = z.tanh();
                    g * 0.5 * (hi - lo) * SQUASH_SHRINK * (1.0 - t * t)
                })
                .collect(),
        };
        for l in (0..self.layer_sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w_start = self.offsets[l];
            let b_start = w_start + fan_in * fan_out;
            let input = &trace.layer_inputs[l];
            let mut d_input = vec![0.0; fan_in];
            for j in 0..fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = w_start + j * fan_in;
                for i in 0..fan_in {
                    d_params[row + i] += dj * input[i];
                    d_input[i] += self.params[row + i] * dj;
                }
                d_params[b_start + j] += dj;
            }
            if l > 0 {
                // input to layer l is tanh of the previous pre-activation
                for (d, a) in d_input.iter_mut().zip(input) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_input;
        }
        if let Some(norm) = &self.input_normalization {
            for (d, scale) in delta.iter_mut().zip(&norm.scale) {
                *d *= scale;
            }
        }
        delta
    }

    /// Jacobian of the output with respect to the parameters, one row per output.
    pub fn grad_output_wrt_params(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NetworkError> {
        let trace = self.trace(input)?;
        let out = self.output_dim();
        Ok((0..out)
            .map(|k| {
                let mut seed = vec![0.0; out];
                seed[k] = 1.0;
                let mut row = vec![0.0; self.params.len()];
                self.backprop(&trace, &seed, &mut row);
                row
            })
            .collect())
    }

    /// Jacobian of the output with respect to the input, one row per output.
    pub fn grad_output_wrt_input(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NetworkError> {
        let trace = self.trace(input)?;
        let out = self.output_dim();
        let mut scratch = vec![0.0; self.params.len()];
        Ok((0..out)
            .map(|k| {
                let mut seed = vec![0.0; out];
                seed[k] = 1.0;
                self.backprop(&trace, &seed, &mut scratch)
            })
            .collect())
    }
}

/// Analytic vs. numeric gradient comparison.
///
/// The error is normwise: `max_i |analytic_i - numeric_i|` divided by the
/// larger infinity norm of the two vectors, so components that are zero in
/// both do not blow up the ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
}

impl GradientReport {
    pub fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
        let inf_norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let scale = inf_norm(&analytic).max(inf_norm(&numeric));
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
        let max_relative_error = if scale == 0.0 { diff } else { diff / scale };
        Self {
            analytic,
            numeric,
            max_relative_error,
        }
    }
}

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("horizon {horizon} exceeds the backpropagation-through-time limit {max}")]
    HorizonTooLong { horizon: usize, max: usize },
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
}

/// Return of the rollout from `s0` and its gradient with respect to the
/// policy parameters, by a reverse sweep through the unrolled dynamics.
pub fn bptt_return_grad(
    env: &dyn Environment,
    policy: &Network,
    s0: &[f64],
    cfg: &HorizonConfig,
    max_horizon: usize,
) -> Result<(f64, Vec<f64>), GradientError> {
    cfg.validate()?;
    if cfg.horizon > max_horizon {
        return Err(GradientError::HorizonTooLong {
            horizon: cfg.horizon,
            max: max_horizon,
        });
    }
    check_policy_shape(env, policy)?;
    if s0.len() != env.state_dim() {
        return Err(CmdpError::StateShape {
            expected: env.state_dim(),
            found: s0.len(),
        }
        .into());
    }
    let n = env.state_dim();
    let m = env.action_dim();
    let bounds = env.action_box();

    let mut states = Vec::with_capacity(cfg.horizon + 1);
    let mut actions = Vec::with_capacity(cfg.horizon);
    let mut traces = Vec::with_capacity(cfg.horizon);
    let mut masks = Vec::with_capacity(cfg.horizon);
    let mut weights = Vec::with_capacity(cfg.horizon);
    states.push(s0.to_vec());
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in 0..cfg.horizon {
        let trace = policy.trace(&states[t]).map_err(CmdpError::from)?;
        let mut action = trace.output.clone();
        bounds.clamp(&mut action);
        if action.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::Diverged { step: t }.into());
        }
        let mask: Vec<bool> = action
            .iter()
            .zip(&trace.output)
            .map(|(a, o)| a == o)
            .collect();
        let next = env.transition(&states[t], &action);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::Diverged { step: t + 1 }.into());
        }
        total += weight * env.reward(&states[t], &action);
        weights.push(weight);
        weight *= cfg.discount;
        traces.push(trace);
        masks.push(mask);
        actions.push(action);
        states.push(next);
    }

    let mut grad = vec![0.0; policy.num_params()];
    // adjoint of the return with respect to s_{t+1}
    let mut lambda = vec![0.0; n];
    for t in (0..cfg.horizon).rev() {
        let (state, action) = (&states[t], &actions[t]);
        let (r_state, r_action) = env.reward_gradients(state, action);
        let (j_state, j_action) = env.transition_jacobians(state, action);
        let w = weights[t];
        let mut g_action: Vec<f64> = (0..m)
            .map(|j| w * r_action[j] + (0..n).map(|i| j_action[i * m + j] * lambda[i]).sum::<f64>())
            .collect();
        for (g, keep) in g_action.iter_mut().zip(&masks[t]) {
            if !keep {
                *g = 0.0;
            }
        }
        let mut g_state: Vec<f64> = (0..n)
            .map(|k| w * r_state[k] + (0..n).map(|i| j_state[i * n + k] * lambda[i]).sum::<f64>())
            .collect();
        let through_policy = policy.backprop(&traces[t], &g_action, &mut grad);
        for (g, p) in g_state.iter_mut().zip(through_policy) {
            *g += p;
        }
        lambda = g_state;
    }
    Ok((total, grad))
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(
        "checkpoint payload has {found} parameters but the header's layer sizes need {expected}"
    )]
    SizeMismatch { expected: usize, found: usize },
    #[error("checkpoint header is invalid: {0}")]
    Header(NetworkError),
}

/// On-disk checkpoint: header fields and the flat parameter list in one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_transform: OutputTransform,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_normalization: Option<InputNormalization>,
    pub params: Vec<f64>,
}

impl From<&Network> for Checkpoint {
    fn from(net: &Network) -> Self {
        Self {
            layer_sizes: net.layer_sizes.clone(),
            activation: net.activation,
            output_transform: net.output_transform.clone(),
            seed: net.seed,
            input_normalization: net.input_normalization.clone(),
            params: net.params.clone(),
        }
    }
}

impl Network {
    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint::from(self)).expect("checkpoint serialises")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, CheckpointError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Eof => CheckpointError::Truncated(e.to_string()),
            _ => CheckpointError::Malformed(e.to_string()),
        })?;
        validate_architecture(&ckpt.layer_sizes, &ckpt.output_transform)
            .map_err(CheckpointError::Header)?;
        let expected = param_count(&ckpt.layer_sizes);
        if ckpt.params.len() != expected {
            return Err(CheckpointError::SizeMismatch {
                expected,
                found: ckpt.params.len(),
            });
        }
        let net = Network::from_params(
            ckpt.layer_sizes,
            ckpt.activation,
            ckpt.output_transform,
            ckpt.params,
            ckpt.seed,
        )
        .map_err(CheckpointError::Header)?;
        match ckpt.input_normalization {
            Some(norm) => net
                .with_input_normalization(norm)
                .map_err(CheckpointError::Header),
            None => Ok(net),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_json(&text)
    }
}

/// Serialize then deserialize.
pub fn checkpoint_roundtrip(net: &Network) -> Result<Network, CheckpointError> {
    Network::from_checkpoint_json(&net.to_checkpoint_json())
}
