use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedem_cli::{execute, load_config, output_dir, prepare, quant_test, summarize, CliError};

/// Federated EM experiments with compressed communication.
#[derive(Parser)]
#[command(name = "fedem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its trace and manifest.
    Run {
        config: PathBuf,
        /// Overrides output.dir and FEDEM_OUT_DIR.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Evaluate workers concurrently; traces are identical either way.
        #[arg(long)]
        workers_parallel: bool,
    },
    /// Check a configuration and print it with every automatic value resolved.
    Validate { config: PathBuf },
    /// Monte-Carlo check of a quantizer's unbiasedness and variance bound.
    QuantTest {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take the quantizer from this configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Summarize a trace file.
    Summarize {
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(errs) => {
                    eprintln!("configuration errors:");
                    for err in &errs.0 {
                        eprintln!("  {err}");
                    }
                }
                CliError::Runtime(err) => eprintln!("error: {err}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            out_dir,
            workers_parallel,
        } => {
            let cfg = load_config(&config)?;
            let prepared = prepare(&cfg, workers_parallel)?;
            let dir = output_dir(out_dir.as_deref(), &cfg);
            let summary = execute(&prepared, &dir)?;
            println!("algorithm: {}", prepared.algo());
            println!("trace: {} ({} rows)", summary.trace_path.display(), summary.rows);
            println!("manifest: {}", summary.manifest_path.display());
            if let Some(last) = &summary.last {
                println!("epochs: {}", last.epoch);
                println!("bits: {}", last.bits);
                if let Some(h) = last.norm_h_sq {
                    println!("final |h|^2: {h:e}");
                }
            }
            if let Some(e) = summary.relative_error {
                println!("relative error: {e}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let prepared = prepare(&cfg, false)?;
            print!("{}", prepared.resolved.to_toml());
            Ok(())
        }
        Command::QuantTest {
            trials,
            seed,
            config,
            dim,
        } => {
            let spec = config.map(|p| load_config(&p).map(|c| c.quantizer)).transpose()?;
            let report = quant_test(spec, dim, trials, seed)?;
            println!("{}", report.render());
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Runtime(fedem_core::Error::InconsistentState(
                    "quantizer check failed".into(),
                )))
            }
        }
        Command::Summarize { trace, burn_in } => {
            println!("{}", summarize(&trace, burn_in)?);
            Ok(())
        }
    }
}
