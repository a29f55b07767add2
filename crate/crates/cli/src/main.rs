//! `ringflow`: simulate the ring-road traffic model, analyze its energy
//! distributions, build datasets, and train and roll out the predictor.

mod args;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Command, ConfigFile, Merge};
use commands::Usage;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (dataset format TRMC0001, checkpoint format TRNN0001)"
);

#[derive(Parser, Debug)]
#[command(name = "ringflow", version = VERSION, about, propagate_version = true)]
struct Cli {
    /// TOML file with defaults: a [model] table for physics plus one table
    /// per subcommand ([simulate], [train], ...); flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: one per core]; results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let file = match &cli.config {
        Some(path) => read_config(path)?,
        None => ConfigFile::default(),
    };
    let model = file.model;
    match cli.command {
        Command::Simulate(a) => {
            let physics = a.physics.clone().merge(model);
            commands::simulate_cmd(a.merge(file.simulate), physics)
        }
        Command::AnalyzeEnergy(a) => {
            let physics = a.physics.clone().merge(model);
            commands::analyze_energy_cmd(a.merge(file.analyze_energy), physics)
        }
        Command::GenDataset(a) => {
            let physics = a.physics.clone().merge(model);
            commands::gen_dataset_cmd(a.merge(file.gen_dataset), physics)
        }
        Command::Split(a) => commands::split_cmd(a.merge(file.split)),
        Command::Train(a) => commands::train_cmd(a.merge(file.train)),
        Command::Predict(a) => commands::predict_cmd(a.merge(file.predict)),
        Command::Reproduce(a) => {
            let physics = a.physics.clone().merge(model);
            commands::reproduce_cmd(a.merge(file.reproduce), physics)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on malformed flags
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ringflow {name}: error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_names_both_file_formats() {
        assert!(VERSION.contains(ringflow_core::DATASET_FORMAT));
        assert!(VERSION.contains(ringflow_core::CHECKPOINT_FORMAT));
    }

    #[test]
    fn config_file_mirrors_flag_names() {
        let cfg: ConfigFile = toml::from_str(
            "[model]\nlook-ahead = 4\ndelta-mode = \"literal-site-h\"\n[train]\nlearning-rate = 0.5\npreset = \"compact\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.look_ahead, Some(4));
        assert_eq!(cfg.train.learning_rate, Some(0.5));
        assert!(toml::from_str::<ConfigFile>("[train]\nlearning_rate = 0.5\n").is_err());
    }

    #[test]
    fn documented_example_config_parses() {
        let doc = include_str!("../../../docs/format.md");
        let block = doc.split("```toml\n").nth(1).and_then(|b| b.split("```").next()).unwrap();
        let cfg: ConfigFile = toml::from_str(block).unwrap();
        assert_eq!(cfg.analyze_energy.sizes.as_deref(), Some(&[30, 60, 120, 240, 600][..]));
        assert_eq!(cfg.model.delta_mode, Some(ringflow_core::DeltaMode::ExchangeDelta));
    }

    #[test]
    fn flags_override_the_config_file() {
        let cli = Cli::parse_from(["ringflow", "simulate", "--sites", "40", "--beta", "2"]);
        let Command::Simulate(a) = cli.command else { unreachable!() };
        let file: ConfigFile = toml::from_str("[model]\nbeta = 3\nk0 = 0.5\n[simulate]\nsites = 10\nsteps = 7\n").unwrap();
        let physics = a.physics.clone().merge(file.model);
        let a = a.merge(file.simulate);
        assert_eq!((a.sites, a.steps), (Some(40), Some(7)));
        assert_eq!((physics.beta, physics.k0, physics.b), (Some(2.0), Some(0.5), None));
    }
}
