use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpconv::experiments::McmcSettings;
use gpconv_cli::{cmd_dgp, cmd_figures, cmd_run, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "gpconv", version, about = "Gaussian process convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reproduce the built-in figure studies.
    Figures {
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Deep GP convergence run.
    Dgp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 500)]
        burn: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        /// Prior draws screened for the chain's starting state.
        #[arg(long, default_value_t = 1)]
        init: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GPCONV_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("GPCONV_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("GPCONV_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let code = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Figures { which, out, seed } => cmd_figures(&which, &out, seed, &mut std::io::stdout()),
        Command::Dgp { config, burn, iters, beta, init: n_init, out, seed } => {
            cmd_dgp(&config, McmcSettings { n_burn: burn, n_iter: iters, beta, n_init }, &out, seed)
        }
    };
    ExitCode::from(code as u8)
}
