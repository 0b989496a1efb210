//! Experiment configuration: TOML file with one table per subsystem.
//!
//! ```toml
//! [plant]
//! kind = "benchmark_sec4"        # or "linear_worst_corner"
//!
//! [constraints]
//! H = [[1.0, 0.0], [-1.0, 0.0]]
//! d = [10.0, 10.0]
//!
//! [model]
//! A = [[0.3, 0.0], [0.0, -0.1]]
//! B = [[1.0], [1.0]]
//! e_bar = [0.4, 0.4]
//!
//! [chance]
//! eta = 0.95
//! tau = 2
//!
//! [learner]
//! alpha = 1e-10
//! beta = 1e-10
//! gamma = 1.0
//!
//! [policy]
//! grid_min = -10.0
//! grid_max = 10.0
//! grid_points_per_dim = 11
//! rbf_width = 2.0
//!
//! [experiment]
//! episodes = 15000
//! seed = 0
//! mode = "adaptive"              # or "fixed_sigma" with sigma = ...
//! out = "out"
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::chance::ChanceSpec;
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::governor::{DeadbeatBackup, ExplorationMode, Governor};
use crate::learner::LearnerConfig;
use crate::linalg::matrix_from_rows;
use crate::model::NominalModel;
use crate::plant::{BenchmarkPlant, LinearWorstCornerPlant, Plant};
use crate::policy::{FeatureBasis, PolicyState};

/// Half-width of the uniform draw for seeded initial weights.
pub const INIT_WEIGHT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[serde(rename = "benchmark_sec4")]
    Benchmark,
    LinearWorstCorner,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    kind: PlantKind,
    x0: Option<Vec<f64>>,
    horizon: Option<usize>,
    #[serde(rename = "A")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Option<Vec<Vec<f64>>>,
    error: Option<Vec<f64>>,
    q: Option<f64>,
    r: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintsSection {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    e_bar: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChanceSection {
    eta: f64,
    tau: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnerSection {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points_per_dim: usize,
    pub rbf_width: f64,
    /// Seeds small random initial weights; zero weights when absent.
    pub init_seed: Option<u64>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            grid_min: -10.0,
            grid_max: 10.0,
            grid_points_per_dim: 11,
            rbf_width: 2.0,
            init_seed: None,
        }
    }
}

impl PolicyParams {
    pub fn basis(&self, state_dim: usize) -> Result<FeatureBasis> {
        FeatureBasis::grid(
            state_dim,
            self.grid_min,
            self.grid_max,
            self.grid_points_per_dim,
            self.rbf_width,
        )
    }

    pub fn initial_policy(&self, state_dim: usize, input_dim: usize) -> Result<PolicyState> {
        let basis = self.basis(state_dim)?;
        match self.init_seed {
            None => Ok(PolicyState::zeros(basis, input_dim)),
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = basis.len();
                let mut draw = || rng.random_range(-INIT_WEIGHT_SCALE..=INIT_WEIGHT_SCALE);
                let theta = DVector::from_fn(n, |_, _| draw());
                let w = DMatrix::from_fn(n, input_dim, |_, _| draw());
                PolicyState::with_weights(basis, theta, w)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeName {
    Adaptive,
    #[serde(alias = "fixed-sigma")]
    FixedSigma,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentSection {
    episodes: usize,
    seed: u64,
    mode: ModeName,
    sigma: Option<f64>,
    out: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            episodes: 15_000,
            seed: 0,
            mode: ModeName::Adaptive,
            sigma: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: PlantSection,
    constraints: ConstraintsSection,
    model: ModelSection,
    chance: ChanceSection,
    learner: LearnerSection,
    #[serde(default)]
    policy: PolicyParams,
    #[serde(default)]
    experiment: ExperimentSection,
}

/// Validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plant: Arc<dyn Plant>,
    pub constraints: ConstraintSet,
    pub model: NominalModel,
    pub chance: ChanceSpec,
    pub learner: LearnerConfig,
    pub policy: PolicyParams,
    pub episodes: usize,
    pub seed: u64,
    pub mode: ExplorationMode,
    pub out: PathBuf,
}

/// Builds the exploration mode from a name and optional sigma.
pub fn exploration_mode(name: &str, sigma: Option<f64>) -> Result<ExplorationMode> {
    match (name, sigma) {
        ("adaptive", None) => Ok(ExplorationMode::Adaptive),
        ("adaptive", Some(_)) => Err(Error::Config("adaptive mode does not take a sigma".into())),
        ("fixed_sigma" | "fixed-sigma", Some(s)) if s > 0.0 && s.is_finite() => {
            Ok(ExplorationMode::FixedSigma(s))
        }
        ("fixed_sigma" | "fixed-sigma", Some(s)) => Err(Error::Config(format!(
            "fixed sigma must be positive, got {s}"
        ))),
        ("fixed_sigma" | "fixed-sigma", None) => {
            Err(Error::Config("fixed_sigma mode requires a sigma".into()))
        }
        (other, _) => Err(Error::Config(format!("unknown mode {other:?}"))),
    }
}

impl ExperimentConfig {
    /// Benchmark setup with the default learning parameters:
    /// `N = 15000`, `T = 15`, `gamma = 1`, `alpha = beta = 1e-10`,
    /// 121 features, `eta = 0.95`, `tau = 2`.
    pub fn benchmark() -> Self {
        let constraints = ConstraintSet::benchmark();
        ExperimentConfig {
            plant: Arc::new(BenchmarkPlant::default()),
            chance: ChanceSpec::new(0.95, 2, constraints.num_constraints()).expect("valid"),
            constraints,
            model: NominalModel::benchmark(),
            learner: LearnerConfig::new(1e-10, 1e-10, 1.0).expect("valid"),
            policy: PolicyParams::default(),
            episodes: 15_000,
            seed: 0,
            mode: ExplorationMode::Adaptive,
            out: PathBuf::from("out"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let constraints = ConstraintSet::from_rows(&file.constraints.h, &file.constraints.d)?;
        let model = NominalModel::new(
            matrix_from_rows(&file.model.a, "model.A")?,
            matrix_from_rows(&file.model.b, "model.B")?,
            DVector::from_vec(file.model.e_bar.clone()),
        )?;
        if model.state_dim() != constraints.state_dim() {
            return Err(Error::Config(format!(
                "model state dimension {} does not match constraints ({})",
                model.state_dim(),
                constraints.state_dim()
            )));
        }
        let chance = ChanceSpec::new(
            file.chance.eta,
            file.chance.tau,
            constraints.num_constraints(),
        )?;
        let learner =
            LearnerConfig::new(file.learner.alpha, file.learner.beta, file.learner.gamma)?;
        let plant = build_plant(&file.plant)?;
        if plant.state_dim() != model.state_dim() || plant.input_dim() != model.input_dim() {
            return Err(Error::Config(format!(
                "plant dimensions ({}, {}) do not match the model ({}, {})",
                plant.state_dim(),
                plant.input_dim(),
                model.state_dim(),
                model.input_dim()
            )));
        }
        let mode_name = match file.experiment.mode {
            ModeName::Adaptive => "adaptive",
            ModeName::FixedSigma => "fixed_sigma",
        };
        let mode = exploration_mode(mode_name, file.experiment.sigma)?;
        // surface basis errors at load time
        file.policy.basis(model.state_dim())?;

        Ok(ExperimentConfig {
            plant,
            constraints,
            model,
            chance,
            learner,
            policy: file.policy,
            episodes: file.experiment.episodes,
            seed: file.experiment.seed,
            mode,
            out: file.experiment.out,
        })
    }

    pub fn horizon(&self) -> usize {
        self.plant.horizon()
    }

    /// Governor with a deadbeat backup that steers back to the initial state.
    pub fn governor(&self) -> Result<Governor> {
        let backup =
            DeadbeatBackup::new(&self.model, self.chance.tau(), self.plant.initial_state())?;
        Governor::new(
            self.model.clone(),
            self.constraints.clone(),
            self.chance,
            Box::new(backup),
            self.mode,
        )
    }

    pub fn initial_policy(&self) -> Result<PolicyState> {
        self.policy
            .initial_policy(self.model.state_dim(), self.model.input_dim())
    }
}

fn build_plant(p: &PlantSection) -> Result<Arc<dyn Plant>> {
    match p.kind {
        PlantKind::Benchmark => {
            if p.a.is_some() || p.b.is_some() || p.error.is_some() || p.q.is_some() || p.r.is_some()
            {
                return Err(Error::Config(
                    "plant.A, plant.B, plant.error, plant.q and plant.r only apply to linear_worst_corner".into(),
                ));
            }
            let mut plant = BenchmarkPlant::default();
            if let Some(x0) = &p.x0 {
                if x0.len() != 2 {
                    return Err(Error::Config(
                        "benchmark plant.x0 must have 2 entries".into(),
                    ));
                }
                plant.x0 = DVector::from_column_slice(x0);
            }
            if let Some(h) = p.horizon {
                plant.horizon = h;
            }
            Ok(Arc::new(plant))
        }
        PlantKind::LinearWorstCorner => {
            let missing = |k: &str| Error::Config(format!("linear_worst_corner needs plant.{k}"));
            let a = matrix_from_rows(p.a.as_ref().ok_or_else(|| missing("A"))?, "plant.A")?;
            let b = matrix_from_rows(p.b.as_ref().ok_or_else(|| missing("B"))?, "plant.B")?;
            let error = DVector::from_vec(p.error.clone().ok_or_else(|| missing("error"))?);
            let x0 = DVector::from_vec(p.x0.clone().ok_or_else(|| missing("x0"))?);
            let plant = LinearWorstCornerPlant::new(
                a,
                b,
                error,
                x0,
                p.horizon.unwrap_or(15),
                p.q.unwrap_or(1.0),
                p.r.unwrap_or(0.0),
            )?;
            Ok(Arc::new(plant))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");

    #[test]
    fn shipped_benchmark_config_matches_builtin() {
        let cfg = ExperimentConfig::from_toml(BENCHMARK).unwrap();
        let builtin = ExperimentConfig::benchmark();
        assert_eq!(cfg.constraints, builtin.constraints);
        assert_eq!(cfg.model, builtin.model);
        assert_eq!(cfg.chance, builtin.chance);
        assert_eq!(cfg.learner, builtin.learner);
        assert_eq!(cfg.policy, builtin.policy);
        assert_eq!(cfg.episodes, 15_000);
        assert_eq!(cfg.horizon(), 15);
        assert_eq!(cfg.mode, ExplorationMode::Adaptive);
        assert_eq!(cfg.plant.initial_state(), builtin.plant.initial_state());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BENCHMARK.replace("[chance]", "[chance]\nextra = 1");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(Error::Config(_))
        ));
        let text = format!("{BENCHMARK}\n[bogus]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn mode_rules() {
        assert_eq!(
            exploration_mode("adaptive", None).unwrap(),
            ExplorationMode::Adaptive
        );
        assert!(exploration_mode("adaptive", Some(1.0)).is_err());
        assert_eq!(
            exploration_mode("fixed-sigma", Some(10.0)).unwrap(),
            ExplorationMode::FixedSigma(10.0)
        );
        assert!(exploration_mode("fixed_sigma", None).is_err());
        assert!(exploration_mode("fixed_sigma", Some(0.0)).is_err());
        assert!(exploration_mode("greedy", None).is_err());

        let text = BENCHMARK.replace(
            "mode = \"adaptive\"",
            "mode = \"fixed_sigma\"\nsigma = 10.0",
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.mode, ExplorationMode::FixedSigma(10.0));
        let text = BENCHMARK.replace("mode = \"adaptive\"", "mode = \"fixed_sigma\"");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn linear_plant_config() {
        let text = BENCHMARK.replace(
            "kind = \"benchmark_sec4\"",
            "kind = \"linear_worst_corner\"\nA = [[0.3, 0.0], [0.0, -0.1]]\nB = [[1.0], [1.0]]\nerror = [0.4, 0.4]\nq = 2.0\nr = 1.0",
        )
        .replace("x0 = [5.0, 5.0]", "x0 = [1.0, 1.0]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.plant.initial_state().as_slice(), &[1.0, 1.0]);
        let missing = BENCHMARK.replace(
            "kind = \"benchmark_sec4\"",
            "kind = \"linear_worst_corner\"",
        );
        assert!(ExperimentConfig::from_toml(&missing).is_err());
        let stray = BENCHMARK.replace(
            "kind = \"benchmark_sec4\"",
            "kind = \"benchmark_sec4\"\nq = 1.0",
        );
        assert!(ExperimentConfig::from_toml(&stray).is_err());
    }

    #[test]
    fn seeded_initial_weights() {
        let mut p = PolicyParams::default();
        assert!(p
            .initial_policy(2, 1)
            .unwrap()
            .w()
            .iter()
            .all(|&w| w == 0.0));
        p.init_seed = Some(3);
        let a = p.initial_policy(2, 1).unwrap();
        let b = p.initial_policy(2, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.w().amax() <= INIT_WEIGHT_SCALE && a.w().amax() > 0.0);
    }
}
