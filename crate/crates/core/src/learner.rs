//! One-step actor-critic with linear function approximation.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::governor::{Branch, StepDecision};
use crate::policy::PolicyState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LearnerConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Domain(format!(
                "alpha must lie in [0, 1), got {alpha}"
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Domain(format!(
                "beta must lie in [0, 1), got {beta}"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(LearnerConfig { alpha, beta, gamma })
    }
}

/// One observed transition `x_prev --u_prev--> x_curr`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub decision_prev: StepDecision,
    pub x_curr: DVector<f64>,
    pub cost: f64,
    /// `gamma^k` when this transition is processed at step `k`.
    pub iota: f64,
    /// Terminal transitions bootstrap from a value of zero.
    pub terminal: bool,
}

/// `delta = -c + gamma V(x) - V(x_prev)`, with `V(x) = 0` on terminal transitions.
pub fn td_error(cfg: &LearnerConfig, policy: &PolicyState, t: &TransitionRecord) -> f64 {
    let next = if t.terminal {
        0.0
    } else {
        policy.value(&t.x_curr)
    };
    -t.cost + cfg.gamma * next - policy.value(&t.x_prev)
}

/// Critic step on every transition; actor step only when the input was drawn
/// from the Gaussian policy, using the `sigma` it was drawn with.
///
/// Returns the TD error.
pub fn update(cfg: &LearnerConfig, policy: &mut PolicyState, t: &TransitionRecord) -> Result<f64> {
    let delta = td_error(cfg, policy, t);
    if !delta.is_finite() {
        return Err(Error::NonFinite(format!(
            "TD error (cost {}, x_prev {:?}, x {:?})",
            t.cost,
            t.x_prev.as_slice(),
            t.x_curr.as_slice()
        )));
    }

    let critic_step = policy.features(&t.x_prev) * (cfg.alpha * delta);
    let actor_step = if t.decision_prev.branch == Branch::Explore {
        let grad = policy.log_policy_gradient(&t.x_prev, &t.u_prev, t.decision_prev.sigma)?;
        Some(grad * (cfg.beta * t.iota * delta))
    } else {
        None
    };

    if critic_step.iter().any(|v| !v.is_finite())
        || actor_step
            .as_ref()
            .is_some_and(|s| s.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("actor-critic weight update".into()));
    }
    policy.add_to_theta(&critic_step);
    if let Some(step) = actor_step {
        policy.add_to_w(&step);
    }
    Ok(delta)
}
