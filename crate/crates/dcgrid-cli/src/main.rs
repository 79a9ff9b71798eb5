use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcgrid::plant::LineModel;
use dcgrid_cli::{Failure, Options, EXIT_CONFIG};

/// Voltage control and stability certification for DC microgrids.
#[derive(Parser)]
#[command(name = "dcgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the local stability certificate of every DGU.
    Certify(Common),
    /// Run a scenario and write the trace and transient metrics.
    Simulate(Common),
    /// Re-run certification and simulation over values of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key, e.g. `grid.lines.0.r`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Reduce a bus network to its DGU-only equivalent.
    Kron(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    line_model: Option<LineModelArg>,
    /// Reserved; every run is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LineModelArg {
    Dynamic,
    Qsl,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            out: self.out.clone(),
            line_model: self.line_model.map(|m| match m {
                LineModelArg::Dynamic => LineModel::Dynamic,
                LineModelArg::Qsl => LineModel::Qsl,
            }),
            quiet: self.quiet,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Certify(c) => dcgrid_cli::cmd_certify(&c.config, &c.options()).map(drop),
        Command::Simulate(c) => dcgrid_cli::cmd_simulate(&c.config, &c.options()).map(drop),
        Command::Sweep { common, param, values } => {
            dcgrid_cli::cmd_sweep(&common.config, &param, &values, &common.options()).map(drop)
        }
        Command::Kron(c) => dcgrid_cli::cmd_kron(&c.config, &c.options()).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
