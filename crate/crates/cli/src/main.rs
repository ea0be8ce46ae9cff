use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fwdsens::runner::{run, Command, Format, RunConfig};

/// Stationary gradient estimation and contraction certificates for
/// stochastic systems. Worker threads follow RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "fwdsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate the contraction coefficients and joint metric over a region.
    Certify(RunArgs),
    /// Forward-sensitivity gradient of the stationary cost.
    Estimate(RunArgs),
    /// Finite-difference gradient from long simulations.
    Oracle(RunArgs),
    /// Both gradients plus per-component z-scores.
    Compare(RunArgs),
    /// Check analytic derivatives against finite differences.
    Validate(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output file; standard output if absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

fn fail(status: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Certify(a) => (Command::Certify, a),
        Sub::Estimate(a) => (Command::Estimate, a),
        Sub::Oracle(a) => (Command::Oracle, a),
        Sub::Compare(a) => (Command::Compare, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return fail(2, format!("cannot read {}: {e}", args.config.display())),
    };
    let mut cfg = match RunConfig::from_toml_with_command(&text, command) {
        Ok(c) => c,
        Err(e) => return fail(e.exit_status() as u8, e),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_steps {
        cfg.n_steps = n;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(p) = &args.output {
        cfg.output.path = Some(p.display().to_string());
    }
    if let Some(f) = args.format {
        cfg.output.format = match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        };
    }
    let doc = match run(&cfg) {
        Ok(d) => d,
        Err(e) => return fail(e.exit_status() as u8, e),
    };
    let written = match &cfg.output.path {
        Some(p) => File::create(p).and_then(|f| {
            let mut w = BufWriter::new(f);
            doc.write(cfg.output.format, &mut w)?;
            w.flush()
        }),
        None => {
            let mut out = io::stdout().lock();
            doc.write(cfg.output.format, &mut out)
        }
    };
    if let Err(e) = written {
        return fail(4, format!("writing output: {e}"));
    }
    ExitCode::from(doc.exit_status() as u8)
}
