use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use probfed_sim::report::render_comparison_table;
use probfed_sim::{load_scenario, replay_check, run_to_dir, scenarios, ConfigError, ScenarioConfig, SimError};
use probfed_transport::TransportMode;

/// Environment variable that overrides the output root.
const OUT_ENV: &str = "PROBFED_OUT";

#[derive(Parser)]
#[command(name = "probfed", version, about = "Probability-level federated ensembling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a shipped scenario by name.
    Run {
        scenario: String,
        /// Output directory (default: $PROBFED_OUT/<name>, then the `output` key, then runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<TransportMode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the CSV artifacts of two run directories.
    ReplayCheck { a: PathBuf, b: PathBuf },
    /// List the shipped scenarios.
    ListScenarios,
}

enum Outcome {
    Ok,
    Mismatch,
}

fn load(scenario: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(scenario);
    if path.exists() {
        return load_scenario(path);
    }
    match scenarios::shipped(scenario) {
        Some(cfg) => cfg,
        None => Err(ConfigError::Io {
            path: scenario.to_string(),
            message: format!("no such file or shipped scenario (shipped: {})", scenarios::names().join(", ")),
        }),
    }
}

fn output_dir(cfg: &ScenarioConfig, out: Option<PathBuf>) -> PathBuf {
    if let Some(dir) = out {
        return dir;
    }
    if let Some(root) = std::env::var_os(OUT_ENV) {
        return PathBuf::from(root).join(&cfg.name);
    }
    match &cfg.output {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("runs").join(&cfg.name),
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Run { scenario, out, mode, seed } => {
            let mut cfg = load(&scenario)?;
            if let Some(mode) = mode {
                cfg.transport = mode;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = output_dir(&cfg, out);
            let output = run_to_dir(&cfg, &dir).with_context(|| format!("scenario `{}`", cfg.name))?;
            for rep in output.reports() {
                for r in &rep.rounds {
                    let kd = r.mean_kd.map_or(String::new(), |k| format!("  mean_kd {k:.6}"));
                    println!(
                        "{:<11} round {}  {:<8} contributors {}  ensemble acc {:.4}  f1 {:.4}{}",
                        rep.paradigm.as_str(),
                        r.round,
                        r.strategy,
                        r.contributors,
                        r.ensemble_acc,
                        r.ensemble_f1,
                        kd
                    );
                }
            }
            if let Some(rows) = &output.comparison {
                print!("\n{}", render_comparison_table(rows));
            }
            println!("artifacts written to {}", dir.display());
            Ok(Outcome::Ok)
        }
        Command::ReplayCheck { a, b } => match replay_check(&a, &b)? {
            None => {
                println!("identical");
                Ok(Outcome::Ok)
            }
            Some(diff) => {
                println!("differ: {diff}");
                Ok(Outcome::Mismatch)
            }
        },
        Command::ListScenarios => {
            for name in scenarios::names() {
                println!("{name}");
            }
            Ok(Outcome::Ok)
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some() || matches!(c.downcast_ref::<SimError>(), Some(SimError::Config(_)))
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Mismatch) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 3 })
        }
    }
}
