use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bipen::cli::{self, exit_code, EXIT_OK, EXIT_VERIFY_FAILED};
use bipen::config::RunConfig;
use bipen::verify::Level;
use bipen::Result;

#[derive(Parser)]
#[command(name = "bipen", version, about = "Penalty-based bilevel solvers and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate psi_sigma, psi and hyper-gradients over an x grid.
    Landscape {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        x_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        x_max: Option<f64>,
        #[arg(long)]
        x_steps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Run a solver and write one trace per replica.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = "BIPEN_JOBS")]
        jobs: Option<usize>,
    },
    /// Check the library invariants.
    Verify {
        #[arg(long, default_value = "fast")]
        level: Level,
    },
}

fn load(config: &Path, output: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Landscape {
            config,
            output,
            x_min,
            x_max,
            x_steps,
            sigmas,
        } => {
            let mut cfg = load(&config, output)?;
            cfg.x_min = x_min.unwrap_or(cfg.x_min);
            cfg.x_max = x_max.unwrap_or(cfg.x_max);
            cfg.x_steps = x_steps.unwrap_or(cfg.x_steps);
            cfg.sigmas = sigmas.unwrap_or(cfg.sigmas);
            cfg.validate()?;
            let path = cli::cmd_landscape(&cfg)?;
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Solve { config, output, jobs } => {
            let cfg = load(&config, output)?;
            cli::cmd_solve(&cfg, cli::resolve_jobs(jobs))?;
            Ok(EXIT_OK)
        }
        Command::Verify { level } => {
            let passed = cli::cmd_verify(level, &mut std::io::stdout().lock())?;
            Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
