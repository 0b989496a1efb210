//! Three-branch exploration governor and backup controllers.
//!
//! Each step the governor picks exactly one of:
//!
//! 1. `Explore`: the state is in `X` and every worst-case nominal successor
//!    `Ax + B mu + eps` is strictly inside `X`; sample `u ~ N(mu, sigma^2 I)`
//!    with the adaptive `sigma` from [`crate::chance::sigma_lower`].
//! 2. `ZeroInput`: the state is in `X` but the guard fails; apply `u = 0`.
//! 3. `Backup`: the state left `X`; apply the next input of a recovery
//!    sequence that returns it within `tau` steps.
//!
//! The law is re-evaluated every step, so an unfinished backup sequence is
//! dropped as soon as the state is back in `X`.

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::chance::{sigma_from_margins, ChanceSpec, MarginTable};
use crate::constraints::ConstraintSet;
use crate::error::{check_dim, Error, Result};
use crate::model::NominalModel;
use crate::policy::{gaussian_input, PolicyState};

/// Produces an input sequence that returns an out-of-set state into `X`.
pub trait BackupPolicy: fmt::Debug + Send + Sync {
    /// Number of inputs in every sequence.
    fn horizon(&self) -> usize;

    fn sequence(&self, x: &DVector<f64>) -> Vec<DVector<f64>>;
}

/// Deadbeat recovery under the nominal model: solves
/// `A^tau x + [A^(tau-1) B, ..., AB, B] [u_0; ...; u_(tau-1)] = target`.
#[derive(Debug, Clone)]
pub struct DeadbeatBackup {
    horizon: usize,
    input_dim: usize,
    a_pow: DMatrix<f64>,
    stacked: DMatrix<f64>,
    stacked_inv: DMatrix<f64>,
    target: DVector<f64>,
}

impl DeadbeatBackup {
    pub fn new(model: &NominalModel, horizon: usize, target: DVector<f64>) -> Result<Self> {
        let (n, m) = (model.state_dim(), model.input_dim());
        check_dim("backup target", n, target.len())?;
        if horizon == 0 || horizon * m != n {
            return Err(Error::SingularBackup(format!(
                "deadbeat recovery needs horizon * input_dim == state_dim, got {horizon} * {m} != {n}"
            )));
        }
        let mut stacked = DMatrix::zeros(n, n);
        let mut block = model.b().clone();
        // columns for u_(tau-1) first, then multiply by A moving left
        for step in (0..horizon).rev() {
            stacked.view_mut((0, step * m), (n, m)).copy_from(&block);
            block = model.a() * block;
        }
        let a_pow = (0..horizon).fold(DMatrix::identity(n, n), |acc, _| model.a() * acc);
        let stacked_inv = stacked
            .clone()
            .lu()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| {
                Error::SingularBackup("the stacked controllability matrix is not invertible".into())
            })?;
        Ok(DeadbeatBackup {
            horizon,
            input_dim: m,
            a_pow,
            stacked,
            stacked_inv,
            target,
        })
    }

    /// `A^tau`.
    pub fn a_power(&self) -> &DMatrix<f64> {
        &self.a_pow
    }

    /// `[A^(tau-1) B, ..., AB, B]`.
    pub fn stacked_gain(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }
}

impl BackupPolicy for DeadbeatBackup {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sequence(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let stacked_u = &self.stacked_inv * (&self.target - &self.a_pow * x);
        (0..self.horizon)
            .map(|k| {
                stacked_u
                    .rows(k * self.input_dim, self.input_dim)
                    .into_owned()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Explore,
    ZeroInput,
    Backup,
    /// Deterministic `u = mu`; greedy evaluation only.
    Mean,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Explore => "explore",
            Branch::ZeroInput => "zero",
            Branch::Backup => "backup",
            Branch::Mean => "mean",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the governor decided at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub branch: Branch,
    /// Standard deviation the input was drawn with; 0 for deterministic branches.
    pub sigma: f64,
    pub mean: DVector<f64>,
    pub u: DVector<f64>,
    pub margins: MarginTable,
    pub argmin: Option<(usize, usize)>,
    pub backup_step_index: Option<usize>,
}

impl StepDecision {
    pub fn min_margin(&self) -> f64 {
        self.margins.min()
    }
}

/// How the exploratory branch chooses its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplorationMode {
    /// Full three-branch law with the adaptive `sigma`.
    Adaptive,
    /// Baseline: always sample with this `sigma`, no branch logic.
    FixedSigma(f64),
}

#[derive(Debug)]
pub struct Governor {
    model: NominalModel,
    constraints: ConstraintSet,
    spec: ChanceSpec,
    corners: Vec<DVector<f64>>,
    backup: Box<dyn BackupPolicy>,
    mode: ExplorationMode,
    pending: Vec<DVector<f64>>,
    backup_step: Option<usize>,
}

impl Governor {
    pub fn new(
        model: NominalModel,
        constraints: ConstraintSet,
        spec: ChanceSpec,
        backup: Box<dyn BackupPolicy>,
        mode: ExplorationMode,
    ) -> Result<Self> {
        check_dim(
            "constraint state dimension",
            model.state_dim(),
            constraints.state_dim(),
        )?;
        if spec.num_constraints() != constraints.num_constraints() {
            return Err(Error::Dimension {
                context: "chance spec constraint count",
                expected: constraints.num_constraints(),
                actual: spec.num_constraints(),
            });
        }
        if !model.validate_input_coupling(&constraints) {
            return Err(Error::Domain(
                "every constraint row needs h_j^T B != 0 for adaptive exploration".into(),
            ));
        }
        if let ExplorationMode::FixedSigma(s) = mode {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!(
                    "fixed sigma must be positive, got {s}"
                )));
            }
        }
        let corners = model.corner_set()?;
        Ok(Governor {
            model,
            constraints,
            spec,
            corners,
            backup,
            mode,
            pending: Vec::new(),
            backup_step: None,
        })
    }

    pub fn model(&self) -> &NominalModel {
        &self.model
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn spec(&self) -> &ChanceSpec {
        &self.spec
    }

    pub fn corners(&self) -> &[DVector<f64>] {
        &self.corners
    }

    pub fn mode(&self) -> ExplorationMode {
        self.mode
    }

    pub fn backup(&self) -> &dyn BackupPolicy {
        self.backup.as_ref()
    }

    /// Position in the running backup sequence, if one is active.
    pub fn backup_step_index(&self) -> Option<usize> {
        self.backup_step
    }

    /// Drops any backup sequence in progress.
    pub fn reset(&mut self) {
        self.pending.clear();
        self.backup_step = None;
    }

    pub fn margin_table(&self, x: &DVector<f64>, mean: &DVector<f64>) -> MarginTable {
        MarginTable::compute(&self.model, &self.constraints, &self.corners, x, mean)
    }

    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        x: &DVector<f64>,
        policy: &PolicyState,
        rng: &mut R,
    ) -> Result<StepDecision> {
        let mean = policy.mean_input(x);
        self.decide_with_mean(x, mean, rng)
    }

    /// Applies the control law for a policy mean computed by the caller.
    pub fn decide_with_mean<R: Rng + ?Sized>(
        &mut self,
        x: &DVector<f64>,
        mean: DVector<f64>,
        rng: &mut R,
    ) -> Result<StepDecision> {
        check_dim("policy mean", self.model.input_dim(), mean.len())?;
        let margins = self.margin_table(x, &mean);

        if let ExplorationMode::FixedSigma(sigma) = self.mode {
            let u = gaussian_input(&mean, sigma, rng)?;
            return Ok(StepDecision {
                branch: Branch::Explore,
                sigma,
                mean,
                u,
                margins,
                argmin: None,
                backup_step_index: None,
            });
        }

        if !self.constraints.contains(x) {
            return Ok(self.backup_step(x, mean, margins));
        }
        self.reset();

        if margins.all_positive() {
            match sigma_from_margins(&self.model, &self.constraints, &self.spec, margins.clone()) {
                Ok(bound) if bound.sigma > 0.0 && bound.sigma.is_finite() => {
                    let u = gaussian_input(&mean, bound.sigma, rng)?;
                    return Ok(StepDecision {
                        branch: Branch::Explore,
                        sigma: bound.sigma,
                        mean,
                        u,
                        margins: bound.margins,
                        argmin: Some(bound.argmin),
                        backup_step_index: None,
                    });
                }
                Ok(bound) => warn!(
                    "adaptive sigma {} is unusable at x = {:?}; applying zero input",
                    bound.sigma,
                    x.as_slice()
                ),
                Err(e) => warn!("exploration guard passed but {e}; applying zero input"),
            }
        }

        let u = DVector::zeros(self.model.input_dim());
        Ok(StepDecision {
            branch: Branch::ZeroInput,
            sigma: 0.0,
            mean,
            u,
            margins,
            argmin: None,
            backup_step_index: None,
        })
    }

    fn backup_step(
        &mut self,
        x: &DVector<f64>,
        mean: DVector<f64>,
        margins: MarginTable,
    ) -> StepDecision {
        let index = match self.backup_step {
            Some(i) if i + 1 < self.pending.len() => i + 1,
            _ => {
                self.pending = self.backup.sequence(x);
                0
            }
        };
        self.backup_step = Some(index);
        StepDecision {
            branch: Branch::Backup,
            sigma: 0.0,
            mean,
            u: self.pending[index].clone(),
            margins,
            argmin: None,
            backup_step_index: Some(index),
        }
    }

    /// Deterministic `u = mu` for greedy evaluation.
    pub fn greedy(&self, x: &DVector<f64>, policy: &PolicyState) -> StepDecision {
        let mean = policy.mean_input(x);
        StepDecision {
            branch: Branch::Mean,
            sigma: 0.0,
            u: mean.clone(),
            margins: self.margin_table(x, &mean),
            mean,
            argmin: None,
            backup_step_index: None,
        }
    }
}
