//! Episode rollout, per-step records and the agents that drive them.

use nalgebra::DVector;
use rand::Rng;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::governor::{ExplorationMode, Governor, StepDecision};
use crate::learner::{self, LearnerConfig, TransitionRecord};
use crate::plant::Plant;
use crate::policy::PolicyState;

/// Chooses inputs and optionally learns from transitions.
pub trait Agent {
    fn begin_episode(&mut self) {}

    fn act<R: Rng + ?Sized>(&mut self, x: &DVector<f64>, rng: &mut R) -> Result<StepDecision>;

    fn observe(&mut self, _t: &TransitionRecord) -> Result<()> {
        Ok(())
    }

    /// Discount used for the `iota` accumulator.
    fn discount(&self) -> f64 {
        1.0
    }

    /// Exploration mode of the episode; fixed-sigma episodes end at the
    /// first constraint violation with a penalty.
    fn mode(&self) -> ExplorationMode {
        ExplorationMode::Adaptive
    }
}

/// Step `k` moves `x_prev = x_(k-1)` to `x = x_k` and costs `c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x_prev: DVector<f64>,
    pub decision: StepDecision,
    pub x: DVector<f64>,
    pub cost: f64,
    /// `x_k` is outside the constraint set.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub initial_state: DVector<f64>,
    pub steps: Vec<StepRecord>,
    /// Baseline penalty added on early termination.
    pub penalty: f64,
    pub terminated_early: bool,
}

impl EpisodeRecord {
    pub fn new(initial_state: DVector<f64>) -> Self {
        EpisodeRecord {
            initial_state,
            steps: Vec::new(),
            penalty: 0.0,
            terminated_early: false,
        }
    }

    /// Cumulative cost `J = sum_k c_k` plus any penalty.
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum::<f64>() + self.penalty
    }

    /// Whether `x_k` was recorded and inside the constraint set, for `k = 1..=horizon`.
    pub fn satisfied(&self, horizon: usize) -> Vec<bool> {
        (1..=horizon)
            .map(|k| {
                self.steps
                    .get(k - 1)
                    .is_some_and(|s| s.k == k && !s.violated)
            })
            .collect()
    }
}

/// Adds the early-termination penalty `(T - k + 1) c_(k+1)` for a violation at
/// step `k` of a fixed-sigma episode and marks it terminated. A step that is
/// not flagged as violated leaves the record unchanged.
///
/// Returns the penalty that was added.
pub fn apply_baseline_penalty(
    record: &mut EpisodeRecord,
    mode: ExplorationMode,
    k: usize,
    next_cost: f64,
    horizon: usize,
) -> Result<f64> {
    if mode == ExplorationMode::Adaptive {
        return Err(Error::Domain(
            "the termination penalty only applies to fixed-sigma baselines".into(),
        ));
    }
    if k == 0 || k > horizon {
        return Err(Error::Domain(format!(
            "penalty step {k} outside 1..={horizon}"
        )));
    }
    let step = record
        .steps
        .get(k - 1)
        .ok_or_else(|| Error::Domain(format!("episode has no step {k}")))?;
    if !step.violated {
        return Ok(0.0);
    }
    let penalty = (horizon - k + 1) as f64 * next_cost;
    record.penalty += penalty;
    record.terminated_early = true;
    Ok(penalty)
}

/// Runs one episode of `plant.horizon()` steps from `plant.initial_state()`.
///
/// At every step the agent acts, the plant moves, and the agent observes the
/// transition with its cost. Fixed-sigma agents stop at the first violation:
/// one more input is drawn at the violating state to price the penalty, and
/// the final transition is terminal with the penalty folded into its cost.
pub fn run_episode<A: Agent, R: Rng + ?Sized>(
    plant: &dyn Plant,
    constraints: &ConstraintSet,
    agent: &mut A,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let horizon = plant.horizon();
    let gamma = agent.discount();
    let mut x = plant.initial_state();
    let mut record = EpisodeRecord::new(x.clone());
    let mut iota = 1.0;
    agent.begin_episode();

    for k in 1..=horizon {
        let decision = agent.act(&x, rng)?;
        let (next, cost) = plant.step(&x, &decision.u)?;
        let violated = !constraints.contains(&next);
        iota *= gamma;
        let mut transition = TransitionRecord {
            x_prev: x.clone(),
            u_prev: decision.u.clone(),
            decision_prev: decision.clone(),
            x_curr: next.clone(),
            cost,
            iota,
            terminal: false,
        };
        record.steps.push(StepRecord {
            k,
            x_prev: x,
            decision,
            x: next.clone(),
            cost,
            violated,
        });

        let mode = agent.mode();
        if violated && matches!(mode, ExplorationMode::FixedSigma(_)) {
            let probe = agent.act(&next, rng)?;
            let (_, next_cost) = plant.step(&next, &probe.u)?;
            let penalty = apply_baseline_penalty(&mut record, mode, k, next_cost, horizon)?;
            transition.cost += penalty;
            transition.terminal = true;
            agent.observe(&transition)?;
            break;
        }
        agent.observe(&transition)?;
        x = next;
    }
    Ok(record)
}

/// Per-step satisfaction frequencies `#{episodes with x_k in X} / N` for `k = 1..=horizon`.
pub fn constraint_frequencies(records: &[EpisodeRecord], horizon: usize) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Domain("no episodes to count".into()));
    }
    let mut counts = vec![0usize; horizon];
    for r in records {
        for (c, ok) in counts.iter_mut().zip(r.satisfied(horizon)) {
            *c += ok as usize;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / records.len() as f64)
        .collect())
}

/// Governor-driven exploration with actor-critic updates.
#[derive(Debug)]
pub struct LearningAgent<'a> {
    pub governor: &'a mut Governor,
    pub policy: &'a mut PolicyState,
    pub learner: LearnerConfig,
}

impl Agent for LearningAgent<'_> {
    fn begin_episode(&mut self) {
        self.governor.reset();
    }

    fn act<R: Rng + ?Sized>(&mut self, x: &DVector<f64>, rng: &mut R) -> Result<StepDecision> {
        self.governor.decide(x, self.policy, rng)
    }

    fn observe(&mut self, t: &TransitionRecord) -> Result<()> {
        learner::update(&self.learner, self.policy, t).map(|_| ())
    }

    fn discount(&self) -> f64 {
        self.learner.gamma
    }

    fn mode(&self) -> ExplorationMode {
        self.governor.mode()
    }
}

/// `u = mu(x; w)`; no exploration, no learning.
#[derive(Debug)]
pub struct GreedyAgent<'a> {
    pub governor: &'a Governor,
    pub policy: &'a PolicyState,
}

impl Agent for GreedyAgent<'_> {
    fn act<R: Rng + ?Sized>(&mut self, x: &DVector<f64>, _rng: &mut R) -> Result<StepDecision> {
        Ok(self.governor.greedy(x, self.policy))
    }
}
