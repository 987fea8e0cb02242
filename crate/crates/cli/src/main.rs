use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msdiff::config::{load_config, preset_text, ConfigSources, RunConfig, KEYS, PRESET_NAMES};
use msdiff::runner::{certify, run_scenario, write_certify_report, EXIT_CONFIG_ERROR, EXIT_SOLVER_ABORT};

fn keys_help() -> String {
    let mut text = String::from("Configuration keys (key=value lines, # comments):\n");
    for (key, doc) in KEYS {
        text.push_str(&format!("  {key:<16} {doc}\n"));
    }
    text.push_str("\nExit codes: 0 clean, 1 solver abort, 2 audit failure, 64 config error.");
    text
}

#[derive(Parser)]
#[command(
    name = "msdiff",
    version,
    about = "Entropy-stable finite-volume solver for Maxwell-Stefan diffusion",
    after_long_help = keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file in key=value format.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario to start from.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// KEY=VALUE entry overriding the preset and the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for output files.
    #[arg(long, value_name = "PATH")]
    output_dir: Option<PathBuf>,
    /// Seed of the certification sampler.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write time series, snapshots, audits and a summary.
    Run(Common),
    /// Certify spectra and mobility definiteness at random states.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Number of random states (default: certify_samples of the config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// List the built-in scenarios, or print one as configuration text.
    Presets {
        name: Option<String>,
    },
}

fn load(common: &Common) -> Result<RunConfig, String> {
    let file_text = match &common.config {
        Some(path) => Some(
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        ),
        None => None,
    };
    let file_name = common
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let mut overrides = common.overrides.clone();
    if let Some(dir) = &common.output_dir {
        overrides.push(format!("output_dir={}", dir.display()));
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    load_config(&ConfigSources {
        preset: common.preset.as_deref(),
        file: file_text.as_deref().map(|t| (file_name.as_str(), t)),
        overrides: &overrides,
    })
    .map_err(|e| e.to_string())
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Presets { name: None } => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            code(0)
        }
        Command::Presets { name: Some(name) } => match preset_text(&name) {
            Some(text) => {
                print!("{text}");
                code(0)
            }
            None => {
                eprintln!("error: unknown preset {name:?}");
                code(EXIT_CONFIG_ERROR)
            }
        },
        Command::Run(common) => {
            let config = match load(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(EXIT_CONFIG_ERROR);
                }
            };
            match run_scenario(&config) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    println!(
                        "{}: {} after {} steps (t = {})",
                        s.scenario, s.status, s.steps, s.final_time
                    );
                    if let Some(e) = &s.error {
                        eprintln!("error: {e}");
                    }
                    println!("outputs in {}", config.output_dir.display());
                    code(outcome.exit_code)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_SOLVER_ABORT)
                }
            }
        }
        Command::Certify { common, samples } => {
            let config = match load(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(EXIT_CONFIG_ERROR);
                }
            };
            let report = certify(&config, samples.unwrap_or(config.certify_samples), config.seed);
            match write_certify_report(&report, &config.output_dir) {
                Ok(path) => {
                    println!(
                        "{}: {} of {} states failed; report in {}",
                        report.scenario,
                        report.failures,
                        report.samples,
                        path.display()
                    );
                    code(report.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_SOLVER_ABORT)
                }
            }
        }
    }
}
