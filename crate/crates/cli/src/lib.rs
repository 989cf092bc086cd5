//! Command-line runner for the flowreg experiments.
//!
//! Every run resolves one [`ExperimentConfig`] (file, then `FLOWREG_SEED`,
//! then flags), executes it inside a rayon pool of the requested size and
//! writes `<out>/<experiment>.csv` plus `<out>/<experiment>.summary.json`.
//! Exit codes: 0 when every criterion passes, 2 for an invalid
//! configuration, 3 for a numerical failure or a failed criterion.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{Experiment, ExperimentConfig, Mode, TauRule};
pub use error::CliError;
pub use report::{Criterion, Report};

#[derive(Debug, Parser)]
#[command(name = "flowreg", version, about = "Regularity and discretization experiments for flow-matching and diffusion drifts")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// worker threads, 0 for one per core
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// also record the wall time in the summary (breaks byte-identity)
    #[arg(long, global = true)]
    pub wall_time: bool,
    /// multiplies every tolerance; used by tests to force failures
    #[arg(long, global = true, hide = true, default_value_t = 1.0)]
    pub tolerance_scale: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a schedule family against its structural assumptions
    Validate {
        #[arg(long)]
        family: Option<String>,
    },
    /// One-sided Lipschitz, operator-norm and time-derivative profiles
    Regularity {
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        family: Option<String>,
        /// e.g. 1,2,16
        #[arg(long)]
        dims: Option<String>,
        /// axis:radius=R,count=M | lattice:radius=R,count=M | samples:n=M
        #[arg(long)]
        probes: Option<String>,
        /// steps of the geometric time grid
        #[arg(long)]
        t_refine: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Exact-law discretization error over a range of step counts
    Converge {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        dims: Option<String>,
        /// e.g. 8..1024 (doubling) or 8,64,512
        #[arg(long, alias = "steps-list")]
        steps: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Flow-map Jacobians, Lipschitz certificate and functional inequalities
    Transport {
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        probes: Option<String>,
        /// number of random initial points
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Drift eigenvalues of the uniform law on the sphere
    Sphere {
        #[arg(long)]
        dim: Option<usize>,
        /// comma-separated times in (0,1)
        #[arg(long)]
        t_grid: Option<String>,
    },
}

impl Command {
    pub fn experiment(&self) -> Experiment {
        match self {
            Command::Validate { .. } => Experiment::Validate,
            Command::Regularity { .. } => Experiment::Regularity,
            Command::Converge { .. } => Experiment::Converge,
            Command::Transport { .. } => Experiment::Transport,
            Command::Sphere { .. } => Experiment::Sphere,
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Merges the config file, the environment and the flags.
pub fn resolve(cli: &Cli, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let exp = cli.command.experiment();
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cfg.experiment {
        if e != exp {
            return Err(CliError::config(format!("config is for {:?} but the subcommand is {}", e.name(), exp.name())));
        }
    }
    cfg.experiment = Some(exp);
    if let Some(s) = env_seed {
        cfg.seed = s.trim().parse().map_err(|_| CliError::config(format!("FLOWREG_SEED is not a u64: {s:?}")))?;
    }
    set(&mut cfg.seed, cli.global.seed);
    set(&mut cfg.output, cli.global.out.clone());
    let explicit = |t: Option<f64>| t.map(TauRule::Explicit);
    match &cli.command {
        Command::Validate { family } => set(&mut cfg.family, family.clone()),
        Command::Regularity { target, family, dims, probes, t_refine, tau } => {
            set(&mut cfg.target, target.clone());
            set(&mut cfg.family, family.clone());
            set(&mut cfg.dims, dims.as_deref().map(config::int_list).transpose()?);
            set(&mut cfg.probes, probes.clone());
            set(&mut cfg.t_refine, *t_refine);
            set(&mut cfg.tau_rule, explicit(*tau));
        }
        Command::Converge { family, target, dims, steps, mode, tau } => {
            set(&mut cfg.family, family.clone());
            set(&mut cfg.target, target.clone());
            set(&mut cfg.dims, dims.as_deref().map(config::int_list).transpose()?);
            set(&mut cfg.steps_list, steps.as_deref().map(config::int_list).transpose()?);
            set(&mut cfg.mode, *mode);
            set(&mut cfg.tau_rule, explicit(*tau));
        }
        Command::Transport { target, family, dim, tau, steps, probes, starts } => {
            set(&mut cfg.target, target.clone());
            set(&mut cfg.family, family.clone());
            set(&mut cfg.dims, dim.map(|d| vec![d]));
            set(&mut cfg.tau_rule, explicit(*tau));
            set(&mut cfg.steps_list, steps.map(|n| vec![n]));
            set(&mut cfg.probes, probes.clone());
            set(&mut cfg.starts, *starts);
        }
        Command::Sphere { dim, t_grid } => {
            set(&mut cfg.dims, dim.map(|d| vec![d]));
            set(&mut cfg.t_grid, t_grid.as_deref().map(config::float_list).transpose()?);
        }
    }
    cfg.check()?;
    Ok(cfg)
}

/// Runs a parsed command line and returns the written report.
pub fn execute(cli: &Cli, env_seed: Option<&str>) -> Result<(Report, ExperimentConfig), CliError> {
    if !(cli.global.tolerance_scale >= 0.0) {
        return Err(CliError::config("tolerance scale must be nonnegative"));
    }
    let cfg = resolve(cli, env_seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot build thread pool: {e}")))?;
    let start = Instant::now();
    let report = pool.install(|| experiments::run(cli.command.experiment(), &cfg, cli.global.tolerance_scale))?;
    let wall = cli.global.wall_time.then(|| start.elapsed().as_secs_f64());
    report.write(&cfg.output, &cfg, wall)?;
    Ok((report, cfg))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var("FLOWREG_SEED").ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok((report, cfg)) => {
            for c in &report.criteria {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
            println!("wrote {}/{}.csv and {0}/{1}.summary.json", cfg.output.display(), report.experiment);
            if report.passed() {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
