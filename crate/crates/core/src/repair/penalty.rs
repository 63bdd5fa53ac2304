//! Exact ℓ1 penalty method with plain clipped gradient ascent.
//!
//! Maximises `objective(θ) - λ Σ_i max(0, -g_i(θ))` for constraints
//! `g_i(θ) ≥ 0`. Each round runs a fixed number of ascent steps; when the
//! round ends infeasible the weight λ is multiplied by `penalty_growth`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub initial_penalty_weight: f64,
    pub penalty_growth: f64,
    pub max_penalty_rounds: usize,
    pub inner_steps: usize,
    pub learning_rate: f64,
    /// Separation required by the critic constraints: `≤ -margin` when
    /// repairing the critic, `≥ +margin` when updating the policy.
    pub constraint_margin: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            initial_penalty_weight: 1.0,
            penalty_growth: 4.0,
            max_penalty_rounds: 6,
            inner_steps: 100,
            learning_rate: 1e-2,
            constraint_margin: 0.05,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.initial_penalty_weight > 0.0) {
            return bad("initial_penalty_weight must be > 0");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty_growth must be > 1");
        }
        if self.max_penalty_rounds == 0 {
            return bad("max_penalty_rounds must be >= 1");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.constraint_margin >= 0.0) {
            return bad("constraint_margin must be >= 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} at round {round}, step {step}")]
    NonFinite {
        what: &'static str,
        round: usize,
        step: usize,
    },
    #[error("gradient has length {found}, parameters have {expected}")]
    GradientShape { expected: usize, found: usize },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

/// A scalar value and its gradient with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Differentiable objective; may be stateful (e.g. draw a fresh minibatch per call).
pub trait Objective {
    fn evaluate(&mut self, params: &[f64]) -> Result<ValueGrad, SolverError>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<ValueGrad, SolverError>,
{
    fn evaluate(&mut self, params: &[f64]) -> Result<ValueGrad, SolverError> {
        self(params)
    }
}

/// A family of differentiable constraints, each required to be `≥ 0`.
pub trait Constraints {
    fn len(&self) -> usize;
    fn evaluate(&self, params: &[f64]) -> Result<Vec<ValueGrad>, SolverError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Constraints given as independent closures.
pub struct ConstraintList<'a>(
    pub Vec<Box<dyn Fn(&[f64]) -> Result<ValueGrad, SolverError> + Sync + 'a>>,
);

impl Constraints for ConstraintList<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<ValueGrad>, SolverError> {
        self.0.iter().map(|g| g(params)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: usize,
    pub penalty_weight: f64,
    pub objective: f64,
    /// `Σ_i max(0, -g_i)` before the step.
    pub violation: f64,
    /// Norm of the applied (clipped) ascent direction.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub params: Vec<f64>,
    pub feasible: bool,
    /// Indices of constraints violated at `params`.
    pub violated: Vec<usize>,
    pub constraint_values: Vec<f64>,
    pub penalty_weight: f64,
    pub rounds: usize,
    pub history: Vec<StepRecord>,
}

fn check_shape(grad: &[f64], n: usize) -> Result<(), SolverError> {
    if grad.len() != n {
        return Err(SolverError::GradientShape {
            expected: n,
            found: grad.len(),
        });
    }
    Ok(())
}

/// Solve `maximise objective subject to constraints ≥ 0` from `start`.
///
/// Returns the last iterate of the first round that ends feasible. If no round
/// ends feasible, returns the best feasible iterate seen (by objective value),
/// or the final iterate flagged infeasible when none was.
pub fn solve_l1_penalty(
    objective: &mut dyn Objective,
    constraints: &dyn Constraints,
    start: &[f64],
    opt: &PenaltyConfig,
) -> Result<SolverOutcome, SolverError> {
    opt.validate()?;
    let n = start.len();
    let mut params = start.to_vec();
    let mut weight = opt.initial_penalty_weight;
    let mut history = Vec::with_capacity(opt.inner_steps * opt.max_penalty_rounds.min(4));
    let mut best_feasible: Option<(f64, Vec<f64>)> = None;

    for round in 0..opt.max_penalty_rounds {
        for step in 0..opt.inner_steps {
            let f = objective.evaluate(&params)?;
            check_shape(&f.grad, n)?;
            if !f.value.is_finite() || f.grad.iter().any(|g| !g.is_finite()) {
                return Err(SolverError::NonFinite {
                    what: "objective",
                    round,
                    step,
                });
            }
            let gs = constraints.evaluate(&params)?;
            let mut direction = f.grad;
            let mut violation = 0.0;
            for g in &gs {
                check_shape(&g.grad, n)?;
                if !g.value.is_finite() || g.grad.iter().any(|v| !v.is_finite()) {
                    return Err(SolverError::NonFinite {
                        what: "constraint",
                        round,
                        step,
                    });
                }
                if g.value < 0.0 {
                    violation -= g.value;
                    for (d, dg) in direction.iter_mut().zip(&g.grad) {
                        *d += weight * dg;
                    }
                }
            }
            if violation == 0.0 && best_feasible.as_ref().map_or(true, |(v, _)| f.value > *v) {
                best_feasible = Some((f.value, params.clone()));
            }
            let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            let scale = if norm > opt.grad_clip {
                opt.grad_clip / norm
            } else {
                1.0
            };
            history.push(StepRecord {
                round,
                penalty_weight: weight,
                objective: f.value,
                violation,
                grad_norm: norm * scale,
            });
            for (p, d) in params.iter_mut().zip(&direction) {
                *p += opt.learning_rate * scale * d;
            }
        }

        let values: Vec<f64> = constraints
            .evaluate(&params)?
            .into_iter()
            .map(|g| g.value)
            .collect();
        if values.iter().all(|v| *v >= 0.0) {
            return Ok(SolverOutcome {
                params,
                feasible: true,
                violated: Vec::new(),
                constraint_values: values,
                penalty_weight: weight,
                rounds: round + 1,
                history,
            });
        }
        if round + 1 < opt.max_penalty_rounds {
            weight *= opt.penalty_growth;
        }
    }

    if let Some((_, best)) = best_feasible {
        let values: Vec<f64> = constraints
            .evaluate(&best)?
            .into_iter()
            .map(|g| g.value)
            .collect();
        return Ok(SolverOutcome {
            params: best,
            feasible: true,
            violated: Vec::new(),
            constraint_values: values,
            penalty_weight: weight,
            rounds: opt.max_penalty_rounds,
            history,
        });
    }
    let values: Vec<f64> = constraints
        .evaluate(&params)?
        .into_iter()
        .map(|g| g.value)
        .collect();
    let violated = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(SolverOutcome {
        params,
        feasible: false,
        violated,
        constraint_values: values,
        penalty_weight: weight,
        rounds: opt.max_penalty_rounds,
        history,
    })
}
