use std::path::PathBuf;
use std::process::ExitCode;

use bea_cli::{commands, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bea", version, about = "Weak backward error analysis experiments for overdamped Langevin integrators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write d_k, A_n and L_n with the self-checks to operators.txt.
    Derive(Options),
    /// Weak error against u(T) and v^(N)(T) over the delta list.
    WeakOrder(Options),
    /// Invariant-measure bias before and after the first correction.
    InvariantBias(Options),
    /// Moment tracks of the implicit schemes and explicit Euler.
    Stability(Options),
}

#[derive(Debug, clap::Args)]
struct Options {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (defaults to `out` from the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Enforce the convergence bounds through the exit code.
    #[arg(long)]
    check: bool,
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
    /// Overrides `mc.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Derive(opts) | Command::WeakOrder(opts) | Command::InvariantBias(opts) | Command::Stability(opts)) =
        &cli.command;
    if let Some(k) = opts.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut config = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.mc.seed = seed;
    }
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(&config.out));
    let exp = config.resolve()?;
    match &cli.command {
        Command::Derive(_) => commands::derive(&exp, &out),
        Command::WeakOrder(o) => commands::weak_order(&exp, &out, o.check),
        Command::InvariantBias(o) => commands::invariant_bias(&exp, &out, o.check),
        Command::Stability(_) => commands::stability(&exp, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bea: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
