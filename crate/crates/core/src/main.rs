use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beta_sim::cli::{
    cmd_count_ops, cmd_run, cmd_sweep, cmd_verify, exit, exit_code, parse_bits, parse_fault,
    Format, RunConfig,
};
use beta_sim::Error;

#[derive(Parser)]
#[command(
    name = "beta-sim",
    version,
    about = "Binary Transformer accelerator simulator"
)]
struct Cli {
    /// Report format: human or machine.
    #[arg(long, global = true, default_value = "human")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured model and report throughput.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomized equivalence checks against the reference implementations.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Measured vs closed-form op counts for N x N products.
    CountOps { n: Vec<u64> },
    /// Throughput at each activation width.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "1,2,4,8")]
        bits: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut c = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn write_report(config: &RunConfig, text: &str) -> Result<(), Error> {
    if let Some(path) = &config.report {
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Error> {
    let format: Format = cli.format.parse()?;
    match cli.command {
        Command::Run { config, seed } => {
            let c = load(Some(&config), seed)?;
            let out = cmd_run(&c, format)?;
            write_report(&c, &out)?;
            print!("{out}");
            Ok(exit::OK)
        }
        Command::Verify {
            config,
            trials,
            seed,
            fault,
        } => {
            let mut c = load(config.as_ref(), seed)?;
            if let Some(f) = fault {
                c.sim.engine.fault = Some(parse_fault(&f)?);
            }
            let (out, ok) = cmd_verify(&c, trials, format)?;
            print!("{out}");
            Ok(if ok { exit::OK } else { exit::VERIFY_FAILED })
        }
        Command::CountOps { n } => {
            let (out, ok) = cmd_count_ops(&n, format)?;
            print!("{out}");
            Ok(if ok { exit::OK } else { exit::VERIFY_FAILED })
        }
        Command::Sweep { config, bits, seed } => {
            let c = load(Some(&config), seed)?;
            let bits = parse_bits(&bits)?;
            let out = cmd_sweep(&c, &bits, format)?;
            write_report(&c, &out)?;
            print!("{out}");
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
