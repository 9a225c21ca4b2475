//! Command-line front end. Exit codes: 0 success, 1 usage or input error,
//! 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bgr::Bgr;
use crate::error::{Error, Result};
use crate::experiment::{default_sweep, equilibrium_snapshot, run_convergence_sweep, RateMode};
use crate::model::{
    generate_instance, ChannelModelConfig, DemandMatrix, GameInstance, UtilityFunction,
    DEFAULT_WEIGHT,
};
use crate::primal_dual::{
    rate_condition_check, run_primal_dual, PdConfig, PdRates, CALIBRATED_DEMAND_RATE,
    CALIBRATED_PRICE_RATE,
};
use crate::swo::{
    solve_equilibrium, user_best_response, verify_kkt, Equilibrium, PriceOptions, DEFAULT_TIE_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spectrum-market",
    version,
    about = "Spectrum market equilibria and primal-dual dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random instance from the channel model.
    Generate {
        #[arg(long, default_value_t = 20)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        providers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        utility: UtilityArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute the market-clearing equilibrium of an instance.
    Solve {
        instance: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write an association report (`<path>`) and its edge list
        /// (`<path>` with a `.csv` extension).
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Run the primal-dual dynamics and record the trajectory.
    Simulate {
        instance: PathBuf,
        #[command(flatten)]
        dynamics: DynamicsArgs,
        #[arg(long, default_value_t = 0)]
        rates_seed: u64,
        /// Scale rates to the equilibrium instead of `k^q = 1`, `k^p ~ U[0.5, 1.5]`.
        #[arg(long)]
        calibrated: bool,
        #[arg(long, default_value_t = 1)]
        sample_stride: usize,
        /// Trajectory CSV; the final state goes next to it as `.state.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check the KKT conditions of a stored state against an instance.
    Verify {
        instance: PathBuf,
        state: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Write the undecided-user graph at the state's prices as DOT.
        #[arg(long)]
        bgr: Option<PathBuf>,
    },
    /// Convergence-time sweep over instance sizes.
    Experiment {
        #[arg(long, default_value_t = 5)]
        providers: usize,
        /// Comma-separated user counts.
        #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
        users: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        utility: UtilityArgs,
        #[command(flatten)]
        dynamics: DynamicsArgs,
        /// Use `k^q = 1`, `k^p ~ U[0.5, 1.5]` instead of calibrated rates.
        #[arg(long)]
        random_rates: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the update-rate condition at an instance's equilibrium.
    Ratecheck {
        instance: PathBuf,
        #[arg(long, default_value_t = 0)]
        rates_seed: u64,
        #[arg(long)]
        calibrated: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum UtilityKind {
    Log,
    AlphaFair,
}

#[derive(Debug, Args)]
struct UtilityArgs {
    #[arg(long, value_enum, default_value_t = UtilityKind::Log)]
    utility: UtilityKind,
    #[arg(long, default_value_t = DEFAULT_WEIGHT)]
    a: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

impl UtilityArgs {
    fn build(&self) -> Result<UtilityFunction> {
        match self.utility {
            UtilityKind::Log => UtilityFunction::scaled_log(self.a),
            UtilityKind::AlphaFair => UtilityFunction::alpha_fair(self.a, self.alpha),
        }
    }
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long, default_value_t = 200_000)]
    max_steps: usize,
}

/// Minimal view of any stored state: equilibrium or simulation output.
#[derive(Deserialize)]
struct StoredState {
    q: Vec<f64>,
    p: Vec<f64>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_)
            | Error::Json(_)
            | Error::InvalidParameter(_)
            | Error::InvalidInstance(_)
            | Error::InstanceTooLarge { .. } => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("hint: see `spectrum-market --help`");
            EXIT_USAGE
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            EXIT_NUMERICAL
        }
    }
}

fn run(command: Command) -> std::result::Result<i32, Failure> {
    match command {
        Command::Generate {
            users,
            providers,
            seed,
            utility,
            output,
        } => {
            let u = utility.build()?;
            let g = generate_instance(&ChannelModelConfig::default(), users, providers, u, seed)?;
            emit(output.as_deref(), g.to_json()?.as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Solve {
            instance,
            output,
            snapshot,
        } => {
            let g = load_instance(&instance)?;
            let eq = solve_equilibrium(&g, &PriceOptions::default())?;
            let json = serde_json::to_string_pretty(&eq.to_record()).map_err(Error::from)?;
            emit(output.as_deref(), json.as_bytes())?;
            if let Some(path) = snapshot {
                let report = equilibrium_snapshot(&g)?;
                fs::write(&path, report.to_json()?).map_err(Error::from)?;
                let mut edges = Vec::new();
                report.write_edges_csv(&mut edges)?;
                fs::write(path.with_extension("csv"), edges).map_err(Error::from)?;
            }
            Ok(if eq.kkt.passed {
                EXIT_OK
            } else {
                EXIT_NUMERICAL
            })
        }
        Command::Simulate {
            instance,
            dynamics,
            rates_seed,
            calibrated,
            sample_stride,
            output,
        } => {
            let g = load_instance(&instance)?;
            let eq = solve_equilibrium(&g, &PriceOptions::default()).ok();
            let rates = build_rates(&g, eq.as_ref(), calibrated, rates_seed)?;
            let cfg = PdConfig {
                eta: dynamics.eta,
                epsilon: dynamics.epsilon,
                max_steps: dynamics.max_steps,
                sample_stride,
                ..Default::default()
            };
            let reference = eq.as_ref().map(|e| (&e.q, e.p.as_slice()));
            let out = run_primal_dual(&g, &rates, &cfg, reference)?;
            let mut csv = Vec::new();
            out.trajectory
                .write_csv(g.users(), g.providers(), &mut csv)?;
            emit(output.as_deref(), &csv)?;
            if let Some(path) = output {
                let state = serde_json::to_string_pretty(&out.to_record()).map_err(Error::from)?;
                fs::write(path.with_extension("state.json"), state).map_err(Error::from)?;
            }
            if out.converged {
                Ok(EXIT_OK)
            } else {
                eprintln!("no convergence after {} steps", out.steps);
                Ok(EXIT_NUMERICAL)
            }
        }
        Command::Verify {
            instance,
            state,
            tol,
            bgr,
        } => {
            let g = load_instance(&instance)?;
            let text = read(&state)?;
            let stored: StoredState = serde_json::from_str(&text).map_err(Error::from)?;
            if stored.p.len() != g.providers() {
                return Err(Failure::Usage("state does not match the instance".into()));
            }
            let q = DemandMatrix::from_flat(g.users(), g.providers(), stored.q)?;
            let report = verify_kkt(&g, &q, &stored.p, tol);
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(Error::from)?
            );
            if let Some(path) = bgr {
                fs::write(path, state_graph_dot(&g, &q, &stored.p)?).map_err(Error::from)?;
            }
            Ok(if report.passed {
                EXIT_OK
            } else {
                EXIT_NUMERICAL
            })
        }
        Command::Experiment {
            providers,
            users,
            trials,
            seed,
            utility,
            dynamics,
            random_rates,
            output,
        } => {
            let mut cfg = default_sweep(providers, users, trials);
            cfg.base_seed = seed;
            cfg.utility = utility.build()?;
            cfg.eta = dynamics.eta;
            cfg.epsilon = dynamics.epsilon;
            cfg.max_steps = dynamics.max_steps;
            cfg.rates = if random_rates {
                RateMode::Random
            } else {
                RateMode::Calibrated
            };
            let stats = run_convergence_sweep(&cfg)?;
            let mut csv = Vec::new();
            stats.write_csv(&mut csv)?;
            emit(output.as_deref(), &csv)?;
            Ok(EXIT_OK)
        }
        Command::Ratecheck {
            instance,
            rates_seed,
            calibrated,
        } => {
            let g = load_instance(&instance)?;
            let eq = solve_equilibrium(&g, &PriceOptions::default())?;
            let rates = if calibrated {
                PdRates::calibrated(
                    &g,
                    &eq.q,
                    CALIBRATED_DEMAND_RATE,
                    CALIBRATED_PRICE_RATE,
                    rates_seed,
                )?
            } else {
                PdRates::random(g.users(), g.providers(), rates_seed)
            };
            let report = rate_condition_check(&g, &eq.q, &rates)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(Error::from)?
            );
            Ok(EXIT_OK)
        }
    }
}

fn build_rates(
    g: &GameInstance,
    eq: Option<&Equilibrium>,
    calibrated: bool,
    seed: u64,
) -> std::result::Result<PdRates, Failure> {
    if !calibrated {
        return Ok(PdRates::random(g.users(), g.providers(), seed));
    }
    let eq = eq.ok_or_else(|| {
        Failure::Numerical("calibrated rates need an equilibrium, and solving failed".into())
    })?;
    Ok(PdRates::calibrated(
        g,
        &eq.q,
        CALIBRATED_DEMAND_RATE,
        CALIBRATED_PRICE_RATE,
        seed,
    )?)
}

/// DOT text for the undecided users at prices `p`, annotated with `q`.
fn state_graph_dot(g: &GameInstance, q: &DemandMatrix, p: &[f64]) -> Result<String> {
    let responses: Vec<_> = (0..g.users())
        .map(|i| user_best_response(g, i, p, DEFAULT_TIE_TOL))
        .collect();
    let undecided: Vec<(usize, Vec<usize>)> = responses
        .iter()
        .enumerate()
        .filter(|(_, br)| br.purchases() && !br.is_decided())
        .map(|(i, br)| (i, br.preference.clone()))
        .collect();
    let x: Vec<f64> = responses.iter().map(|br| br.x_star).collect();
    let mut decided = q.clone();
    for (i, _) in &undecided {
        for j in 0..g.providers() {
            decided[(*i, j)] = 0.0;
        }
    }
    let graph = Bgr::from_instance(g, &undecided, &x, &decided)?;
    let demands = graph
        .edges()
        .iter()
        .map(|e| ((e.user, e.provider), q[(e.user, e.provider)]))
        .collect();
    Ok(graph.to_dot(Some(&demands)))
}

fn load_instance(path: &Path) -> Result<GameInstance> {
    GameInstance::from_json(&read(path)?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}
