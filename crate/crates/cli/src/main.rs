use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdthreshold::model::config::Source;
use rdthreshold::Config;

mod commands;
mod output;

/// Threshold solutions of 1D bistable reaction-diffusion equations.
#[derive(Parser, Debug)]
#[command(name = "rdthreshold", version)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set grid.n=3201`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ground state W and principal eigenfunction.
    Steady {
        #[arg(long)]
        a: Option<f64>,
    },
    /// Principal and second eigenpairs of the linearization at W.
    Eigen {
        #[arg(long)]
        a: Option<f64>,
    },
    /// Evolves a datum until a fate certificate fires.
    Simulate {
        /// zero | const:V | block:L | two_bump:R:L | <field CSV>
        #[arg(long, default_value = "zero")]
        u0: String,
        #[arg(long)]
        a: Option<f64>,
    },
    /// Sharp threshold of a datum family.
    Threshold {
        /// single_block | two_bump
        #[arg(long, default_value = "single_block")]
        family: String,
        #[arg(long)]
        r: Option<f64>,
        /// Bracket width (threshold.tol_L).
        #[arg(long)]
        tol: Option<f64>,
        /// Also write the spliced threshold trajectory.
        #[arg(long)]
        trajectory: bool,
        #[arg(long)]
        a: Option<f64>,
    },
    /// Floquet bundle along a spliced trajectory file.
    Adjoint {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Fates of u0 + eps h for a threshold trajectory's datum u0.
    Perturb {
        #[arg(long)]
        trajectory: PathBuf,
        /// Field CSV with the direction h.
        #[arg(long)]
        h: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
    },
    /// Residual of the orthogonality identity along a trajectory file.
    Orthogonality {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// dL*/dr of the two-bump family: adjoint formula against finite differences.
    Dldr {
        #[arg(long = "r-grid", value_delimiter = ',', required = true)]
        r_grid: Vec<f64>,
        #[arg(long = "fd-step", default_value_t = 0.05)]
        fd_step: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Cheapest threshold datum for the cost ∫ j(u0).
    Optimize {
        /// linear | quadratic
        #[arg(long, default_value = "linear")]
        j: String,
        /// single_block | two_bump:R | <field CSV>
        #[arg(long, default_value = "single_block")]
        seed: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Runs the acceptance criteria.
    Verify {
        /// Subset of criteria (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A check ran but did not pass.
    Failed(String),
    Core(rdthreshold::Error),
}

impl From<rdthreshold::Error> for CliError {
    fn from(e: rdthreshold::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(e) if e.is_budget() => 3,
            CliError::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Built-in defaults, then the config file, then `--set` and subcommand flags.
fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        config.merge_text(&text, Source::File)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        config.set(k.trim(), v.trim(), Source::CommandLine)?;
    }
    let flag = |config: &mut Config, key: &str, v: Option<f64>| -> Result<(), CliError> {
        if let Some(v) = v {
            config.set(key, &v.to_string(), Source::CommandLine)?;
        }
        Ok(())
    };
    match &cli.command {
        Command::Steady { a } | Command::Eigen { a } | Command::Simulate { a, .. } => {
            flag(&mut config, "nonlinearity.a", *a)?
        }
        Command::Threshold { a, tol, .. } => {
            flag(&mut config, "nonlinearity.a", *a)?;
            flag(&mut config, "threshold.tol_L", *tol)?;
        }
        _ => {}
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} workers: {e}")))?;
    }
    let config = resolve_config(&cli)?;
    commands::dispatch(&cli.command, config, &cli.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rdthreshold: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
