use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orlicz_cli::config::QuadratureConfig;
use orlicz_cli::{config, exit_code, run_file, Overrides, EXIT_ERROR, EXIT_PASS};

/// Verifies negative association and its supporting inequalities on Orlicz models.
#[derive(Parser)]
#[command(name = "orlicz", version)]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Run the command described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Quadrature relative tolerance.
        #[arg(long)]
        rel_tol: Option<f64>,
        /// Quadrature absolute tolerance.
        #[arg(long)]
        abs_tol: Option<f64>,
        /// Maximal bisection depth per panel.
        #[arg(long)]
        max_depth: Option<usize>,
        /// Maximal panels per one-dimensional integral.
        #[arg(long)]
        max_intervals: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.action {
        Action::Run { config, output, seed, rel_tol, abs_tol, max_depth, max_intervals } => {
            let quadrature = QuadratureConfig { rel_tol, abs_tol, max_depth, max_intervals };
            exit_code(&run_file(&config, &Overrides { output_dir: output, seed, quadrature }))
        }
        Action::Validate { config } => match config::load(&config) {
            Ok(_) => EXIT_PASS,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
    };
    ExitCode::from(code as u8)
}
