use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rhfs_cli::checks::render;
use rhfs_cli::sweep::default_sweep_dir;
use rhfs_cli::{run, sweep, worker_count, Axis, CliError, Scenario};
use rhfs_core::container::inspect;

/// Relativistic Hartree-Fock scenario runner.
#[derive(Parser)]
#[command(name = "rhfs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        file: PathBuf,
        /// Output directory (default: the scenario's `output_dir`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        file: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated, strictly monotone.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the header of a binary container.
    Inspect { container: PathBuf },
    /// Pretty-print a JSON check report or manifest.
    Checks { report: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn output_dir(scenario: &Scenario, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&scenario.name))
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { file, out } => {
            let scenario = Scenario::load(&file)?;
            let dir = output_dir(&scenario, out);
            let outcome = run(&scenario, &dir)?;
            let (text, _) = render(&serde_json::to_value(&outcome.manifest)?);
            print!("{text}");
            println!("artifacts: {}", dir.display());
            Ok(outcome.status.exit_code())
        }
        Command::Sweep { file, axis, values, out } => {
            let template = Scenario::load(&file)?;
            let dir = out.unwrap_or_else(|| default_sweep_dir(&template, axis));
            let manifest = sweep(&template, axis, &values, &dir, worker_count())?;
            let (text, _) = render(&serde_json::to_value(&manifest)?);
            print!("{text}");
            println!("table: {}", dir.join("sweep.csv").display());
            Ok(manifest.status.exit_code())
        }
        Command::Inspect { container } => {
            println!("{}", inspect(&container)?);
            Ok(0)
        }
        Command::Checks { report } => {
            let text = std::fs::read_to_string(&report).map_err(|source| CliError::Io { path: report.clone(), source })?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let (text, ok) = render(&value);
            print!("{text}");
            Ok(if ok { 0 } else { 1 })
        }
    }
}
