use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use fsl_cli::commands::{
    cmd_bound, cmd_commcost, cmd_run, load_config, ArchChoice, BoundArgs, CliError, RunOptions,
};
use fsl_cli::report;

#[derive(Parser)]
#[command(name = "fsl", version, about = "Federated supermask learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config (or a previous run's manifest.json).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "FSL_OUT_DIR", default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        seed_override: Option<u32>,
    },
    /// Sweep the vote failure-probability bound over p and alpha.
    Bound {
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 0.6)]
        p_min: f64,
        #[arg(long, default_value_t = 0.99)]
        p_max: f64,
        #[arg(long, default_value_t = 40)]
        p_steps: usize,
        /// Comma-separated malicious fractions.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        alpha: Vec<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-round communication cost of every protocol for an architecture.
    #[command(group(ArgGroup::new("arch_source").required(true).args(["arch", "counts"])))]
    Commcost {
        /// lenet-mnist, conv8-cifar10 or lenet-femnist.
        #[arg(long)]
        arch: Option<String>,
        /// Comma-separated per-layer parameter counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let res = match &out {
        Some(path) => std::fs::File::create(path).and_then(|f| {
            let mut w = io::BufWriter::new(f);
            write(&mut w)?;
            w.flush()
        }),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    };
    res.map_err(|source| CliError::Io {
        context: "writing output".into(),
        source,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed_override,
        } => {
            let cfg = load_config(&config)?;
            let records = cmd_run(cfg, &out, &RunOptions { workers, seed_override })?;
            if let Some(acc) = records.last().and_then(|r| r.accuracy) {
                eprintln!(
                    "round {}: mean accuracy {} (results in {})",
                    records.last().map_or(0, |r| r.round),
                    report::fmt6(acc.mean),
                    out.display()
                );
            }
            Ok(())
        }
        Command::Bound {
            n,
            p_min,
            p_max,
            p_steps,
            alpha,
            out,
        } => {
            let rows = cmd_bound(&BoundArgs {
                n,
                p_min,
                p_max,
                p_steps,
                alphas: alpha,
            })?;
            emit(out, |w| report::write_bound(w, &rows))
        }
        Command::Commcost { arch, counts, out } => {
            let choice = match (arch, counts) {
                (Some(name), _) => ArchChoice::Preset(name),
                (None, Some(c)) => ArchChoice::Counts(c),
                (None, None) => unreachable!("clap enforces the group"),
            };
            let (spec, rows) = cmd_commcost(&choice)?;
            emit(out, |w| report::write_costs(w, &spec, &rows))
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
