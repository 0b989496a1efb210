//! Training campaigns, greedy evaluation, Monte-Carlo checks and CSV output.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chance::{sigma_lower, ChanceSpec, SigmaBound};
use crate::config::{ExperimentConfig, PolicyParams};
use crate::constraints::ConstraintSet;
use crate::episode::{run_episode, EpisodeRecord, GreedyAgent, LearningAgent};
use crate::error::{Error, Result};
use crate::governor::Governor;
use crate::model::NominalModel;
use crate::plant::{LinearWorstCornerPlant, Plant};
use crate::policy::{gaussian_input, PolicyState};

/// Training episodes between greedy evaluations.
pub const EVAL_INTERVAL: usize = 50;

pub const EPISODES_CSV: &str = "episodes.csv";
pub const FREQUENCY_CSV: &str = "frequency.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const SIGMA_FINAL_CSV: &str = "sigma_final.csv";
pub const TRAJECTORY_FINAL_CSV: &str = "trajectory_final.csv";
pub const WEIGHTS_FILE: &str = "weights.txt";
pub const LAST_GOOD_WEIGHTS_FILE: &str = "weights_last_good.txt";

/// Independent stream for training episode `episode` under root seed `seed`.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn columns(prefix: &str, n: usize) -> String {
    if n == 1 && prefix == "u" {
        return "u".into();
    }
    (1..=n)
        .map(|i| format!("{prefix}{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",")
}

struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    fn create(dir: &Path, name: &str, header: &str) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = CsvFile {
            path,
            out: BufWriter::new(file),
        };
        csv.row(header)?;
        Ok(csv)
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Callback invoked with the index and record of every training episode.
pub type EpisodeObserver<'a> = dyn FnMut(usize, &EpisodeRecord) + 'a;

/// What a campaign produced besides its files.
#[derive(Debug, Clone)]
pub struct CampaignSummary {
    /// Satisfaction frequency for `k = 1..=T`; empty when no episode ran.
    pub frequencies: Vec<f64>,
    /// `(episodes trained before the evaluation, greedy J)`.
    pub greedy_costs: Vec<(usize, f64)>,
    pub final_policy: PolicyState,
    pub final_episode: Option<EpisodeRecord>,
    pub trace_rows: usize,
}

/// Trains `cfg.episodes` episodes and writes the CSV set into `out`.
///
/// Before every `EVAL_INTERVAL`-th training episode a greedy episode is
/// rolled out with the current weights; it neither learns nor counts toward
/// the frequencies. `observer` sees every training episode.
pub fn run_campaign(
    cfg: &ExperimentConfig,
    out: &Path,
    mut observer: Option<&mut EpisodeObserver<'_>>,
) -> Result<CampaignSummary> {
    let horizon = cfg.horizon();
    let plant = cfg.plant.as_ref();
    let mut governor = cfg.governor()?;
    let mut policy = cfg.initial_policy()?;
    let (n, m) = (cfg.model.state_dim(), cfg.model.input_dim());

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut episodes_csv = CsvFile::create(out, EPISODES_CSV, "episode,J_greedy")?;
    let mut trace_csv = CsvFile::create(
        out,
        TRACE_CSV,
        &format!(
            "episode,k,{},{},branch,sigma,min_margin,cost,violated",
            columns("x", n),
            columns("u", m)
        ),
    )?;

    let mut counts = vec![0usize; horizon];
    let mut greedy_costs = Vec::new();
    let mut trace_rows = 0;
    let mut last = None;

    for episode in 0..cfg.episodes {
        if episode % EVAL_INTERVAL == 0 {
            let j = greedy_episode(plant, &governor, &policy)?.total_cost();
            episodes_csv.row(&format!("{episode},{}", num(j)))?;
            greedy_costs.push((episode, j));
        }

        let checkpoint = policy.clone();
        let mut rng = episode_rng(cfg.seed, episode);
        let mut agent = LearningAgent {
            governor: &mut governor,
            policy: &mut policy,
            learner: cfg.learner,
        };
        let record = match run_episode(plant, &cfg.constraints, &mut agent, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                let path = out.join(LAST_GOOD_WEIGHTS_FILE);
                save_weights(&path, &cfg.policy, &checkpoint)?;
                error!(
                    "episode {episode} failed; weights from its start saved to {}",
                    path.display()
                );
                return Err(Error::NonFinite(format!(
                    "training aborted in episode {episode} ({e}); last good weights in {}",
                    path.display()
                )));
            }
        };

        for s in &record.steps {
            trace_csv.row(&format!(
                "{episode},{},{},{},{},{},{},{},{}",
                s.k,
                join(&s.x),
                join(&s.decision.u),
                s.decision.branch,
                num(s.decision.sigma),
                num(s.decision.min_margin()),
                num(s.cost),
                s.violated as u8
            ))?;
            trace_rows += 1;
        }
        for (c, ok) in counts.iter_mut().zip(record.satisfied(horizon)) {
            *c += ok as usize;
        }
        if let Some(obs) = observer.as_mut() {
            obs(episode, &record);
        }
        last = Some(record);
    }
    episodes_csv.finish()?;
    trace_csv.finish()?;

    let frequencies: Vec<f64> = if cfg.episodes == 0 {
        Vec::new()
    } else {
        counts
            .iter()
            .map(|&c| c as f64 / cfg.episodes as f64)
            .collect()
    };
    let mut freq_csv = CsvFile::create(out, FREQUENCY_CSV, "k,freq")?;
    for (k, f) in frequencies.iter().enumerate() {
        freq_csv.row(&format!("{},{}", k + 1, num(*f)))?;
    }
    freq_csv.finish()?;

    write_sigma_final(out, last.as_ref(), &governor)?;
    write_trajectory_final(out, last.as_ref(), n)?;
    save_weights(&out.join(WEIGHTS_FILE), &cfg.policy, &policy)?;
    info!(
        "campaign finished: {} episodes, {} trace rows, output in {}",
        cfg.episodes,
        trace_rows,
        out.display()
    );

    Ok(CampaignSummary {
        frequencies,
        greedy_costs,
        final_policy: policy,
        final_episode: last,
        trace_rows,
    })
}

/// Greedy rollout `u = mu(x; w)` from the plant's initial state.
pub fn greedy_episode(
    plant: &dyn Plant,
    governor: &Governor,
    policy: &PolicyState,
) -> Result<EpisodeRecord> {
    let mut agent = GreedyAgent { governor, policy };
    // the greedy agent never draws from the stream
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_episode(plant, governor.constraints(), &mut agent, &mut rng)
}

/// Per-step margin summary `Delta_k(i, j)`: the smallest predicted margin of
/// constraint `j` over the error corners whose first coordinate is `+e_bar_1`
/// (`i = 1`) or `-e_bar_1` (`i = 2`).
pub fn corner_margin_summary(
    record_step: &crate::episode::StepRecord,
    governor: &Governor,
) -> [[f64; 2]; 2] {
    let table = &record_step.decision.margins;
    let n = governor.model().state_dim();
    let mut out = [[f64::INFINITY; 2]; 2];
    for c in 0..table.num_corners() {
        let i = (c >> (n - 1)) & 1;
        for (j, slot) in out[i].iter_mut().enumerate() {
            *slot = slot.min(table.get(j, c));
        }
    }
    out
}

fn write_sigma_final(out: &Path, last: Option<&EpisodeRecord>, governor: &Governor) -> Result<()> {
    let mut csv = CsvFile::create(
        out,
        SIGMA_FINAL_CSV,
        "k,sigma,delta_11,delta_12,delta_21,delta_22",
    )?;
    if governor.constraints().num_constraints() == 2 {
        for s in last.map(|r| r.steps.as_slice()).unwrap_or_default() {
            let d = corner_margin_summary(s, governor);
            csv.row(&format!(
                "{},{},{},{},{},{}",
                s.k - 1,
                num(s.decision.sigma),
                num(d[0][0]),
                num(d[0][1]),
                num(d[1][0]),
                num(d[1][1])
            ))?;
        }
    } else {
        info!("{SIGMA_FINAL_CSV} left empty: the margin summary needs exactly two constraints");
    }
    csv.finish()
}

fn write_trajectory_final(out: &Path, last: Option<&EpisodeRecord>, n: usize) -> Result<()> {
    let mut csv = CsvFile::create(out, TRAJECTORY_FINAL_CSV, &format!("k,{}", columns("x", n)))?;
    if let Some(r) = last {
        csv.row(&format!("0,{}", join(&r.initial_state)))?;
        for s in &r.steps {
            csv.row(&format!("{},{}", s.k, join(&s.x)))?;
        }
    }
    csv.finish()
}

const WEIGHTS_MAGIC: &str = "# safe-explore weights v1";

/// Flat text weights: header lines, then `theta` values, then `w` row-major.
pub fn save_weights(path: &Path, params: &PolicyParams, policy: &PolicyState) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{WEIGHTS_MAGIC}").map_err(io)?;
    writeln!(w, "features {}", policy.basis().len()).map_err(io)?;
    writeln!(w, "state_dim {}", policy.basis().state_dim()).map_err(io)?;
    writeln!(w, "input_dim {}", policy.input_dim()).map_err(io)?;
    writeln!(w, "grid_min {}", num(params.grid_min)).map_err(io)?;
    writeln!(w, "grid_max {}", num(params.grid_max)).map_err(io)?;
    writeln!(w, "grid_points_per_dim {}", params.grid_points_per_dim).map_err(io)?;
    writeln!(w, "rbf_width {}", num(params.rbf_width)).map_err(io)?;
    writeln!(w, "theta").map_err(io)?;
    for t in policy.theta().iter() {
        writeln!(w, "{}", num(*t)).map_err(io)?;
    }
    writeln!(w, "w").map_err(io)?;
    for i in 0..policy.w().nrows() {
        for c in 0..policy.w().ncols() {
            writeln!(w, "{}", num(policy.w()[(i, c)])).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a file written by [`save_weights`].
pub fn load_weights(path: &Path) -> Result<(PolicyParams, PolicyState)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
    if it.next() != Some(WEIGHTS_MAGIC) {
        return Err(bad("missing weights header".into()));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = it.next().ok_or_else(|| bad(format!("missing {name}")))?;
        line.strip_prefix(name)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| bad(format!("expected {name}, found {line:?}")))
    };
    let parse_usize =
        |s: String, name: &str| s.parse::<usize>().map_err(|e| bad(format!("{name}: {e}")));
    let parse_f64 =
        |s: String, name: &str| s.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")));

    let features = parse_usize(field("features")?, "features")?;
    let state_dim = parse_usize(field("state_dim")?, "state_dim")?;
    let input_dim = parse_usize(field("input_dim")?, "input_dim")?;
    let params = PolicyParams {
        grid_min: parse_f64(field("grid_min")?, "grid_min")?,
        grid_max: parse_f64(field("grid_max")?, "grid_max")?,
        grid_points_per_dim: parse_usize(field("grid_points_per_dim")?, "grid_points_per_dim")?,
        rbf_width: parse_f64(field("rbf_width")?, "rbf_width")?,
        init_seed: None,
    };

    let rest: Vec<&str> = lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .skip(8)
        .collect();
    if rest.first() != Some(&"theta") {
        return Err(bad("missing theta section".into()));
    }
    let w_at = rest
        .iter()
        .position(|&l| l == "w")
        .ok_or_else(|| bad("missing w section".into()))?;
    let values = |ls: &[&str]| -> Result<Vec<f64>> {
        ls.iter()
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| bad(format!("weight {l:?}: {e}")))
            })
            .collect()
    };
    let theta = values(&rest[1..w_at])?;
    let w = values(&rest[w_at + 1..])?;
    if theta.len() != features || w.len() != features * input_dim {
        return Err(bad(format!(
            "expected {features} theta and {} w values, found {} and {}",
            features * input_dim,
            theta.len(),
            w.len()
        )));
    }
    let basis = params.basis(state_dim)?;
    if basis.len() != features {
        return Err(bad(format!(
            "grid yields {} features, header says {features}",
            basis.len()
        )));
    }
    let policy = PolicyState::with_weights(
        basis,
        DVector::from_vec(theta),
        DMatrix::from_row_slice(features, input_dim, &w),
    )?;
    Ok((params, policy))
}

/// Greedy rollout of saved weights under `cfg`'s plant.
pub fn evaluate(cfg: &ExperimentConfig, policy: &PolicyState) -> Result<EpisodeRecord> {
    if policy.basis().state_dim() != cfg.model.state_dim()
        || policy.input_dim() != cfg.model.input_dim()
    {
        return Err(Error::Config(
            "weights do not match the configured state/input dimensions".into(),
        ));
    }
    let governor = cfg.governor()?;
    greedy_episode(cfg.plant.as_ref(), &governor, policy)
}

/// One line of a Monte-Carlo sufficiency report.
#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    /// Multiplier applied to the adaptive sigma.
    pub scale: f64,
    pub sigma: f64,
    pub constraint: usize,
    pub binding: bool,
    pub satisfied: usize,
    pub samples: usize,
    pub frequency: f64,
    /// Binomial standard error at `eta'`.
    pub std_error: f64,
}

impl McRow {
    /// `(frequency - eta') / SE`.
    pub fn z_score(&self, eta_prime: f64) -> f64 {
        (self.frequency - eta_prime) / self.std_error
    }
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub eta_prime: f64,
    pub bound: SigmaBound,
    pub corner: DVector<f64>,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn binding_row(&self, scale: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.binding && r.scale == scale)
    }
}

/// Monte-Carlo check of the per-constraint guarantee.
///
/// The true plant is the nominal model with its error pinned at the minimizing
/// corner, `x+ = Ax + Bu + eps*`. Inputs are drawn as `N(mu, (scale sigma)^2 I)`
/// and the satisfaction frequency of each constraint is reported next to
/// `eta'`. At `scale = 1` the binding constraint should hit `eta'` exactly in
/// expectation.
#[allow(clippy::too_many_arguments)]
pub fn mc_corollary_check(
    model: &NominalModel,
    constraints: &ConstraintSet,
    spec: &ChanceSpec,
    x: &DVector<f64>,
    u_mean: &DVector<f64>,
    samples: usize,
    scales: &[f64],
    seed: u64,
) -> Result<McReport> {
    if samples == 0 {
        return Err(Error::Domain(
            "Monte-Carlo check needs at least one sample".into(),
        ));
    }
    let bound = sigma_lower(model, constraints, spec, x, u_mean)?;
    let corner = model.corner_set()?[bound.argmin.1].clone();
    let plant = LinearWorstCornerPlant::new(
        model.a().clone(),
        model.b().clone(),
        corner.clone(),
        x.clone(),
        1,
        0.0,
        0.0,
    )?;
    let eta_prime = spec.eta_prime();
    let std_error = (eta_prime * (1.0 - eta_prime) / samples as f64).sqrt();

    let mut rows = Vec::new();
    for (si, &scale) in scales.iter().enumerate() {
        let sigma = scale * bound.sigma;
        let mut rng = episode_rng(seed, si);
        let mut hits = vec![0usize; constraints.num_constraints()];
        for _ in 0..samples {
            let u = gaussian_input(u_mean, sigma, &mut rng)?;
            let next = plant.dynamics(x, &u);
            for (j, h) in hits.iter_mut().enumerate() {
                *h += (constraints.margin(j, &next) >= 0.0) as usize;
            }
        }
        for (j, &satisfied) in hits.iter().enumerate() {
            rows.push(McRow {
                scale,
                sigma,
                constraint: j,
                binding: j == bound.argmin.0,
                satisfied,
                samples,
                frequency: satisfied as f64 / samples as f64,
                std_error,
            });
        }
    }
    Ok(McReport {
        eta_prime,
        bound,
        corner,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governor::ExplorationMode;

    fn small_cfg(episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            episodes,
            ..ExperimentConfig::benchmark()
        }
    }

    #[test]
    fn zero_episodes_write_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_campaign(&small_cfg(0), dir.path(), None).unwrap();
        assert!(s.frequencies.is_empty() && s.greedy_costs.is_empty());
        let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(read(EPISODES_CSV), "episode,J_greedy\n");
        assert_eq!(read(FREQUENCY_CSV), "k,freq\n");
        assert_eq!(
            read(TRACE_CSV),
            "episode,k,x1,x2,u,branch,sigma,min_margin,cost,violated\n"
        );
        assert_eq!(
            read(SIGMA_FINAL_CSV),
            "k,sigma,delta_11,delta_12,delta_21,delta_22\n"
        );
        assert_eq!(read(TRAJECTORY_FINAL_CSV), "k,x1,x2\n");
    }

    #[test]
    fn small_campaign_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_campaign(&small_cfg(120), dir.path(), None).unwrap();
        assert_eq!(s.trace_rows, 120 * 15);
        assert_eq!(
            s.greedy_costs.iter().map(|g| g.0).collect::<Vec<_>>(),
            vec![0, 50, 100]
        );
        let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(read(TRACE_CSV).lines().count(), 1 + 120 * 15);
        assert_eq!(read(FREQUENCY_CSV).lines().count(), 16);
        assert_eq!(read(SIGMA_FINAL_CSV).lines().count(), 16);
        assert_eq!(read(TRAJECTORY_FINAL_CSV).lines().count(), 17);
        assert!(s.frequencies.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(30);
        let s = run_campaign(&cfg, dir.path(), None).unwrap();
        let (params, p) = load_weights(&dir.path().join(WEIGHTS_FILE)).unwrap();
        assert_eq!(params.grid_points_per_dim, 11);
        assert_eq!(p, s.final_policy);
        let rec = evaluate(&cfg, &p).unwrap();
        assert_eq!(rec.steps.len(), 15);

        let broken = dir.path().join("broken.txt");
        fs::write(&broken, "not weights\n").unwrap();
        assert!(load_weights(&broken).is_err());
    }

    #[test]
    fn baseline_campaign_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            mode: ExplorationMode::FixedSigma(10.0),
            ..small_cfg(200)
        };
        let s = run_campaign(&cfg, dir.path(), None).unwrap();
        assert!(s.trace_rows < 200 * 15);
        assert!(s.frequencies[0] < 0.9);
    }

    #[test]
    fn corner_summary_on_benchmark() {
        let cfg = small_cfg(1);
        let dir = tempfile::tempdir().unwrap();
        let s = run_campaign(&cfg, dir.path(), None).unwrap();
        let g = cfg.governor().unwrap();
        let rec = s.final_episode.unwrap();
        let first = &rec.steps[0];
        let d = corner_margin_summary(first, &g);
        // mu = 0 at x0 = [5, 5]: Ax = [1.5, -0.5]
        assert!((d[0][0] - 8.1).abs() < 1e-12);
        assert!((d[0][1] - 11.9).abs() < 1e-12);
        assert!((d[1][0] - 8.9).abs() < 1e-12);
        assert!((d[1][1] - 11.1).abs() < 1e-12);
    }

    #[test]
    fn mc_examples() {
        let model = NominalModel::new(
            NominalModel::benchmark().a().clone(),
            NominalModel::benchmark().b().clone(),
            DVector::zeros(2),
        )
        .unwrap();
        let c = ConstraintSet::benchmark();
        let spec = ChanceSpec::new(0.95, 2, 2).unwrap();
        let x = DVector::from_column_slice(&[5.0, 5.0]);
        let mu = DVector::zeros(1);
        let r =
            mc_corollary_check(&model, &c, &spec, &x, &mu, 20_000, &[0.05, 1.0, 2.0], 1).unwrap();
        assert!(r
            .rows
            .iter()
            .filter(|row| row.scale == 0.05)
            .all(|row| row.frequency == 1.0));
        let bind = r.binding_row(1.0).unwrap();
        assert!(bind.z_score(r.eta_prime).abs() < 4.0);
        let wide = r.binding_row(2.0).unwrap();
        assert!(wide.z_score(r.eta_prime) < -3.0);
    }
}
