//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{phi_bounds_with_cap, BoundsReport, MU_MIN_CAP};
use crate::error::{Error, Result};
use crate::instances::{self, random::random_mdp};
use crate::mdp::{load_instance, Mdp};
use crate::policy_search::{design, AdmissibleSet, DesignOutcome, Strategy};

/// Exit status for bad input.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for a numerical failure.
pub const EXIT_SOLVER: i32 = 3;

/// CSV header written by `sweep`.
pub const SWEEP_HEADER: &str = "env,strategy,lambda,epsilon,objective,cost,score,phi";

#[derive(Debug, Parser)]
#[command(name = "apt-forge", version, about = "Reward design for admissible policy teaching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design a reward with one strategy and report bounds.
    Design(DesignArgs),
    /// Run every sweep strategy over a grid of lambda and epsilon values.
    Sweep(SweepArgs),
    /// Write an instance in the MDP JSON format.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Bundled environment: cliff, action_hacking or grass_mud.
    #[arg(long, conflicts_with = "mdp", required_unless_present = "mdp")]
    pub env: Option<String>,
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// Discount; defaults to 0.9 for bundled environments and to the file's value otherwise.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Seed for sampled quantities.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Policy budget for enumeration-based quantities.
    #[arg(long, default_value_t = MU_MIN_CAP)]
    pub cap: u128,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// opt, opt-adm, qgreedy, constrain-optimize or special.
    #[arg(long, default_value = "constrain-optimize")]
    pub strategy: String,
    /// Where to write the JSON result; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Lambda grid `a:b:n` (n evenly spaced points from a to b).
    #[arg(long)]
    pub sweep_lambda: Option<String>,
    /// Epsilon grid `a:b:n`.
    #[arg(long)]
    pub sweep_epsilon: Option<String>,
    /// Where to write the CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Bundled environment to export; a random MDP when absent.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    /// Share one transition row across the actions of each state.
    #[arg(long)]
    pub special: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON document written by `design`.
#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub instance: String,
    pub strategy: Strategy,
    pub gamma: f64,
    pub epsilon: f64,
    /// Whether the designed policy only uses admissible actions where it acts.
    pub admissible: bool,
    pub outcome: DesignOutcome,
    pub bounds: BoundsReport,
}

struct Loaded {
    label: String,
    mdp: Mdp,
    adm: AdmissibleSet,
}

fn load(args: &InstanceArgs) -> Result<Loaded> {
    if let Some(g) = args.gamma {
        if !(0.0..1.0).contains(&g) {
            return Err(Error::InvalidArgument(format!("--gamma must lie in [0, 1), got {g}")));
        }
    }
    match (&args.env, &args.mdp) {
        (Some(name), _) => {
            let world = instances::bundled_env(name)?.with_gamma(args.gamma.unwrap_or(0.9))?;
            Ok(Loaded { label: name.clone(), mdp: world.mdp, adm: world.admissible })
        }
        (None, Some(path)) => {
            let (mut mdp, adm) = load_instance(path)?;
            if let Some(g) = args.gamma {
                let mut file = mdp.to_file(adm.as_ref());
                file.gamma = g;
                mdp = crate::mdp::validate_mdp(&file)?;
            }
            let adm = adm.unwrap_or_else(|| AdmissibleSet::all(&mdp));
            adm.check(&mdp)?;
            let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(Loaded { label, mdp, adm })
        }
        (None, None) => Err(Error::InvalidArgument("one of --env or --mdp is required".into())),
    }
}

fn check_params(p: &ParamArgs) -> Result<()> {
    if !(p.lambda.is_finite() && p.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("--lambda must be finite and non-negative, got {}", p.lambda)));
    }
    if !(p.epsilon.is_finite() && p.epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("--epsilon must be finite and non-negative, got {}", p.epsilon)));
    }
    Ok(())
}

/// Parses `a:b:n` into `n` evenly spaced values from `a` to `b`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("grid '{text}' is not of the form a:b:n"));
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, n] = parts.as_slice() else { return Err(bad()) };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("grid '{text}' must have finite ends and at least one point")));
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|source| Error::Io { path: "<stdout>".into(), source })
        }
    }
}

/// Runs `design` and returns the report.
pub fn run_design(args: &DesignArgs) -> Result<DesignReport> {
    check_params(&args.params)?;
    let strategy: Strategy = args.strategy.parse()?;
    let Loaded { label, mdp, adm } = load(&args.instance)?;
    let p = &args.params;
    let outcome = design(&mdp, &adm, strategy, p.lambda, p.epsilon)?;
    let bounds = phi_bounds_with_cap(&mdp, &adm, p.lambda, p.epsilon, &outcome, None, p.cap, p.seed)?;
    let occ = crate::planning::occupancy(&mdp, &outcome.policy)?;
    let admissible = occ.support.iter().all(|&s| adm.allows(s, outcome.policy.action(s)));
    Ok(DesignReport { instance: label, strategy, gamma: mdp.gamma(), epsilon: p.epsilon, admissible, outcome, bounds })
}

/// Sweep rows in output order: grid points in order, strategies in
/// [`Strategy::SWEEP`] order within each point.
pub fn run_sweep(args: &SweepArgs) -> Result<Vec<String>> {
    check_params(&args.params)?;
    let lambdas = match &args.sweep_lambda {
        Some(g) => parse_grid(g)?,
        None => vec![args.params.lambda],
    };
    let epsilons = match &args.sweep_epsilon {
        Some(g) => parse_grid(g)?,
        None => vec![args.params.epsilon],
    };
    for &v in lambdas.iter().chain(&epsilons) {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("sweep values must be non-negative, got {v}")));
        }
    }
    let Loaded { label, mdp, adm } = load(&args.instance)?;
    let jobs: Vec<(f64, f64, Strategy)> = lambdas
        .iter()
        .flat_map(|&l| epsilons.iter().flat_map(move |&e| Strategy::SWEEP.map(|s| (l, e, s))))
        .collect();
    jobs.par_iter()
        .map(|&(lambda, epsilon, strategy)| {
            let o = design(&mdp, &adm, strategy, lambda, epsilon)?;
            Ok(format!(
                "{label},{strategy},{lambda},{epsilon},{},{},{},{}",
                o.objective, o.cost, o.score, o.phi
            ))
        })
        .collect()
}

fn run_generate(args: &GenerateArgs) -> Result<String> {
    let file = match &args.env {
        Some(name) => {
            let world = instances::bundled_env(name)?.with_gamma(args.gamma.unwrap_or(0.9))?;
            world.mdp.to_file(Some(&world.admissible))
        }
        None => {
            if args.states == 0 || args.actions == 0 {
                return Err(Error::InvalidArgument("--states and --actions must be positive".into()));
            }
            let mut file = random_mdp(args.seed, args.states, args.actions, args.special, (-1.0, 1.0)).to_file(None);
            if let Some(g) = args.gamma {
                file.gamma = g;
            }
            crate::mdp::validate_mdp(&file)?;
            file
        }
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design(args) => {
            let report = run_design(args)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            let o = &report.outcome;
            println!("{} {:.6} {:.6} {:.6}", report.strategy, o.objective, o.cost, o.score);
            write_output(args.out.as_deref(), &json)
        }
        Command::Sweep(args) => {
            let rows = run_sweep(args)?;
            let mut csv = String::from(SWEEP_HEADER);
            csv.push('\n');
            for row in rows {
                csv.push_str(&row);
                csv.push('\n');
            }
            write_output(args.out.as_deref(), &csv)
        }
        Command::Generate(args) => write_output(args.out.as_deref(), &run_generate(args)?),
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_SOLVER
    }
}
