#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use paint_core::PaintError;

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(PaintError),
}

impl From<PaintError> for CliError {
    fn from(e: PaintError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(PaintError::InvalidArgument(_)) => 2,
            CliError::Core(PaintError::Numerical { .. } | PaintError::NonFinite { .. } | PaintError::Cfl { .. }) => 3,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "paint", version, about = "Parallel-in-time neural twins for chaotic flows")]
struct Cli {
    /// Configuration file (`key = value` lines in `[section]`s).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set training.steps=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the dataset and write its manifest.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
    },
    /// Train the window model or the autoregressive baseline.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Continue from the run's checkpoint if one exists.
        #[arg(long)]
        resume: bool,
        /// Abort after this many total steps, as a killed run would.
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
    },
    /// Estimate the held-out trajectories from sparse measurements.
    Reconstruct {
        #[arg(long, value_enum, default_value = "paint")]
        model: ModelKind,
        #[command(flatten)]
        twin: TwinArgs,
    },
    /// Metrics, MSE-over-time and spectra for every model and constellation.
    Evaluate {
        #[command(flatten)]
        twin: TwinArgs,
    },
    /// Logistic-map divergence and Jacobian product diagnostics.
    Diagnose {
        /// Biased logistic rollouts and their divergence times.
        #[arg(long)]
        logistic: bool,
        /// Comma-separated biases for `--logistic`.
        #[arg(long)]
        eps: Option<String>,
        /// Jacobian product norms of the trained AR baseline.
        #[arg(long)]
        jacobian: bool,
    },
    /// Render report CSVs (files or directories of them) as SVG charts.
    Plot { inputs: Vec<PathBuf> },
}

#[derive(Args, Debug)]
struct TwinArgs {
    #[arg(long, value_enum)]
    constellation: Option<ConstellationArg>,
    /// Probe file, implies `--constellation file`.
    #[arg(long)]
    probes: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Sampler seeds per estimate.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Paint,
    Ar,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Paint => "paint",
            ModelKind::Ar => "ar",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConstellationArg {
    Grid,
    Vertical,
    File,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sequence,
    Sliding,
}

fn apply_twin_args(cfg: &mut Config, a: &TwinArgs) -> Result<(), CliError> {
    if let Some(c) = a.constellation {
        let name = match c {
            ConstellationArg::Grid => "grid",
            ConstellationArg::Vertical => "vertical",
            ConstellationArg::File => "file",
        };
        cfg.set("twin", "constellation", name)?;
        cfg.set("eval", "constellations", name)?;
    }
    if let Some(p) = &a.probes {
        cfg.set("twin", "probe_file", p)?;
        cfg.set("twin", "constellation", "file")?;
        cfg.set("eval", "constellations", "file")?;
    }
    if let Some(m) = a.mode {
        cfg.set("twin", "mode", if matches!(m, ModeArg::Sequence) { "sequence" } else { "sliding-single" })?;
    }
    if let Some(s) = a.seeds {
        cfg.set("twin", "seeds", &s.to_string())?;
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        cfg.set_dotted(o)?;
    }
    match &cli.command {
        Some(Command::Simulate { seed, frames, out }) => {
            if let Some(s) = seed {
                cfg.set("system", "seed", &s.to_string())?;
            }
            if let Some(f) = frames {
                cfg.set("system", "frames", &f.to_string())?;
            }
            if let Some(o) = out {
                cfg.set("dataset", "dir", o)?;
            }
        }
        Some(Command::Train { steps, batch, .. }) => {
            if let Some(s) = steps {
                cfg.set("training", "steps", &s.to_string())?;
            }
            if let Some(b) = batch {
                cfg.set("training", "batch", &b.to_string())?;
            }
        }
        Some(Command::Reconstruct { twin, .. } | Command::Evaluate { twin }) => apply_twin_args(&mut cfg, twin)?,
        Some(Command::Diagnose { eps: Some(e), .. }) => cfg.set("eval", "logistic_eps", e)?,
        _ => {}
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PAINT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("PAINT_THREADS = '{v}' is not a thread count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = resolve(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    let f32 = cfg.str("model", "precision") == "f32";
    macro_rules! dispatch {
        ($f:ident ( $($arg:expr),* )) => {
            if f32 { commands::$f::<f32>($($arg),*) } else { commands::$f::<f64>($($arg),*) }
        };
    }
    match command {
        Command::Simulate { .. } => dispatch!(simulate(&cfg)),
        Command::Train { model, resume, stop_after, .. } => dispatch!(train(&cfg, model, resume, stop_after)),
        Command::Reconstruct { model, .. } => dispatch!(reconstruct(&cfg, model)),
        Command::Evaluate { .. } => dispatch!(evaluate(&cfg)),
        Command::Diagnose { logistic, jacobian, .. } => {
            if !logistic && !jacobian {
                return Err(CliError::Config("diagnose needs --logistic and/or --jacobian".into()));
            }
            let mut series = Vec::new();
            if logistic {
                series.extend(commands::diagnose_logistic(&cfg)?);
            }
            if jacobian {
                series.extend(dispatch!(diagnose_jacobian(&cfg))?);
            }
            commands::write_jacobian(&cfg, &series)
        }
        Command::Plot { inputs } => commands::plot(&cfg, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paint: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
