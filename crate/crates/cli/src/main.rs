use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msnt_cli::config::{parse_config, ConfigError, RunConfig};
use msnt_cli::runner::{self, RunFailure, RunOptions, SweepParam};

/// Entropy-stable finite-volume solver for heat-conducting Maxwell-Stefan mixtures.
#[derive(Debug, Parser)]
#[command(name = "msnt", version)]
struct Cli {
    /// Print the resolved default configuration (optionally for a scenario) and exit.
    #[arg(long)]
    print_defaults: bool,

    /// Scenario used by --print-defaults.
    #[arg(long, requires = "print_defaults")]
    scenario: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one trajectory per value of a parameter (tau, N, epsilon, lambda).
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Exit with status 3 when a conservation or entropy check fails.
    #[arg(long)]
    strict: bool,
    /// Seed for a random multiplicative ripple on the initial data.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        let name = cli.scenario.as_deref().unwrap_or("default");
        return match RunConfig::preset(name) {
            Some(cfg) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            None => report(&RunFailure::Config(ConfigError::Validation(format!("unknown scenario `{name}`")))),
        };
    }
    let Some(command) = cli.command else {
        eprintln!("nothing to do; see `msnt --help`");
        return ExitCode::from(1);
    };
    match command {
        Command::Run { config, common } => {
            let (cfg, opts) = match load(&config, &common) {
                Ok(v) => v,
                Err(f) => return report(&f),
            };
            match runner::run(&cfg, &opts) {
                Ok(summary) => {
                    let last = summary.final_record();
                    println!(
                        "done: {} steps, t = {}, H = {:.16e}, output in {}",
                        summary.records.len() - 1,
                        last.time,
                        last.entropy,
                        cfg.output.directory.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(f) => report(&f),
            }
        }
        Command::Sweep { config, param, values, common } => {
            let (cfg, opts) = match load(&config, &common) {
                Ok(v) => v,
                Err(f) => return report(&f),
            };
            match runner::sweep(&cfg, param, &values, &opts) {
                Ok(rows) => {
                    let mut code = 0;
                    for row in &rows {
                        match &row.outcome {
                            Ok(_) => println!("{}={}: ok", param.name(), row.label),
                            Err(f) => {
                                eprintln!("{}={}: {f}", param.name(), row.label);
                                code = code.max(f.exit_code());
                            }
                        }
                    }
                    ExitCode::from(code)
                }
                Err(f) => report(&f),
            }
        }
    }
}

fn load(path: &Path, common: &Common) -> Result<(RunConfig, RunOptions), RunFailure> {
    let text = std::fs::read_to_string(path).map_err(|e| RunFailure::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(RunFailure::Config)?;
    if let Some(out) = &common.out {
        cfg.output.directory = out.clone();
    }
    Ok((cfg, RunOptions { strict: common.strict, seed: common.seed }))
}

/// Prints the JSON error report on stderr and converts the failure to an exit code.
fn report(failure: &RunFailure) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&failure.to_json()).expect("json"));
    ExitCode::from(failure.exit_code())
}
