use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use safe_explore::campaign::{evaluate, load_weights, mc_corollary_check, run_campaign};
use safe_explore::config::{exploration_mode, ExperimentConfig};
use safe_explore::governor::ExplorationMode;
use safe_explore::markov::RecoveryChain;
use safe_explore::{Error, Result};

#[derive(Parser)]
#[command(
    name = "safe-explore",
    version,
    about = "Chance-constrained exploration for actor-critic learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Adaptive,
    FixedSigma,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write the CSV set.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Exploration spread for fixed-sigma mode.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy rollout of saved weights.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Monte-Carlo check of the per-constraint guarantee at the initial state.
    McCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multipliers on the adaptive sigma.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        scales: Vec<f64>,
    },
    /// Occupancy bound of the recovery chain.
    MarkovBound {
        #[arg(long)]
        tau: usize,
        /// Return probabilities rho_1..rho_tau, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            episodes,
            seed,
            mode,
            sigma,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.mode = match (mode, sigma) {
                (Some(Mode::Adaptive), s) => exploration_mode("adaptive", s)?,
                (Some(Mode::FixedSigma), s) => exploration_mode("fixed_sigma", s)?,
                (None, None) => cfg.mode,
                (None, Some(s)) => match cfg.mode {
                    ExplorationMode::FixedSigma(_) => exploration_mode("fixed_sigma", Some(s))?,
                    ExplorationMode::Adaptive => {
                        return Err(Error::Config("--sigma needs --mode fixed-sigma".into()))
                    }
                },
            };
            let out = out.unwrap_or_else(|| cfg.out.clone());
            info!(
                "training {} episodes, seed {}, mode {:?}",
                cfg.episodes, cfg.seed, cfg.mode
            );
            let summary = run_campaign(&cfg, &out, None)?;
            if let Some(min) = summary.frequencies.iter().cloned().reduce(f64::min) {
                println!("min satisfaction frequency {min:.6}");
            }
            if let Some((e, j)) = summary.greedy_costs.last() {
                println!("greedy J before episode {e}: {j:.6e}");
            }
            println!("output written to {}", out.display());
            Ok(())
        }
        Command::Eval { config, weights } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (_, policy) = load_weights(&weights)?;
            let rec = evaluate(&cfg, &policy)?;
            println!("k,branch,min_margin,cost,violated");
            for s in &rec.steps {
                println!(
                    "{},{},{:.6e},{:.6e},{}",
                    s.k,
                    s.decision.branch,
                    s.decision.min_margin(),
                    s.cost,
                    s.violated as u8
                );
            }
            println!("J = {:.16e}", rec.total_cost());
            Ok(())
        }
        Command::McCheck {
            config,
            samples,
            seed,
            scales,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let x = cfg.plant.initial_state();
            let mu = cfg.initial_policy()?.mean_input(&x);
            let r = mc_corollary_check(
                &cfg.model,
                &cfg.constraints,
                &cfg.chance,
                &x,
                &mu,
                samples,
                &scales,
                seed,
            )?;
            println!(
                "eta' = {:.6}, sigma_lower = {:.6e} (constraint {}, corner {})",
                r.eta_prime,
                r.bound.sigma,
                r.bound.argmin.0 + 1,
                r.bound.argmin.1
            );
            println!("scale,sigma,constraint,binding,frequency,std_error,z");
            for row in &r.rows {
                println!(
                    "{},{:.6e},{},{},{:.6},{:.2e},{:.2}",
                    row.scale,
                    row.sigma,
                    row.constraint + 1,
                    row.binding,
                    row.frequency,
                    row.std_error,
                    row.z_score(r.eta_prime)
                );
            }
            Ok(())
        }
        Command::MarkovBound { tau, rho, horizon } => {
            if rho.len() != tau {
                return Err(Error::Domain(format!(
                    "expected {tau} return probabilities, got {}",
                    rho.len()
                )));
            }
            let chain = RecoveryChain::new(rho)?;
            let (holds, min_p1) = chain.verify_bound(horizon);
            println!("bound rho_1^tau = {:.12}", chain.lower_bound());
            println!("min Pr{{in X}} over k <= {horizon}: {min_p1:.12}");
            println!("{}", if holds { "holds" } else { "VIOLATED" });
            Ok(())
        }
    }
}
