use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::error::ErrorKind;
use clap::{ArgAction, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::worlds::ObjectKind;

use super::checks::{property_suite, CheckOutcome};
use super::config::ExperimentConfig;
use super::ops;
use super::report::{mode_name, write_manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const SELF_TEST_FILE: &str = "self_test.json";

#[derive(Debug, Parser)]
#[command(name = "gdyn", version, about = "Guided particle dynamics: data generation, training, evaluation and planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON experiment configuration; missing fields take defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Run seed; overrides the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for every output of the run
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// Object to simulate
    #[arg(
        long,
        global = true,
        value_parser = PossibleValuesParser::new(["tblock", "stiff-rope", "bendy-rope", "cloth"])
            .map(|s| s.parse::<ObjectKind>().expect("listed values parse")),
    )]
    pub object: Option<ObjectKind>,

    /// Evaluate guided prediction only
    #[arg(long, global = true, overrides_with = "no_guided")]
    pub guided: bool,

    /// Evaluate unguided prediction only
    #[arg(long = "no-guided", global = true, overrides_with = "guided")]
    pub no_guided: bool,

    /// Number of training interactions
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub data_size: Option<u64>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate training interactions
    GenData,
    /// Train the network, generating data if needed
    Train,
    /// Multi-step prediction error of a trained model
    EvalDynamics,
    /// Closed-loop relocation with a trained model
    Plan,
    /// Full pipeline for one object
    Reproduce,
    /// Run the property suites
    SelfTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::EvalDynamics => "eval-dynamics",
            Command::Plan => "plan",
            Command::Reproduce => "reproduce",
            Command::SelfTest => "self-test",
        }
    }
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = self.object {
            cfg.object = o;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.data_size {
            cfg.data_size = Some(n as usize);
        }
        if self.guided {
            cfg.guided = Some(true);
        } else if self.no_guided {
            cfg.guided = Some(false);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn self_test(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<CheckOutcome>, Vec<PathBuf>)> {
    fs::create_dir_all(out_dir)?;
    let outcomes = property_suite(cfg.seed);
    let path = out_dir.join(SELF_TEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&outcomes)? + "\n")?;
    Ok((outcomes, vec![path]))
}

fn execute(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    match command {
        Command::GenData => {
            let (data, files) = ops::gen_data(cfg, out)?;
            println!("generated {} {} interactions", data.len(), cfg.object);
            Ok(files)
        }
        Command::Train => {
            let (outcome, files) = ops::train(cfg, out)?;
            let last = outcome.curve.last().map_or(outcome.initial_loss, |c| c.train_loss);
            println!(
                "trained {} epochs: loss {:.4e} -> {:.4e}, kept epoch {}",
                outcome.curve.len(),
                outcome.initial_loss,
                last,
                outcome.best_epoch.map_or("none".to_string(), |e| e.to_string())
            );
            Ok(files)
        }
        Command::EvalDynamics => {
            let model = ops::load_model(out)?;
            let files = ops::eval_dynamics_to(cfg, &model, out)?;
            println!("wrote {}", files[0].display());
            Ok(files)
        }
        Command::Plan => {
            let model = ops::load_model(out)?;
            let (runs, files) = ops::plan_to(cfg, &model, out)?;
            for r in &runs {
                println!("{}: {}/{} episodes solved", mode_name(r.guided), r.successes(), r.records.len());
            }
            Ok(files)
        }
        Command::Reproduce => {
            let files = ops::reproduce(cfg, out)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(files)
        }
        Command::SelfTest => {
            let (outcomes, files) = self_test(cfg, out)?;
            for o in &outcomes {
                println!("{}", o.line());
            }
            match outcomes.iter().filter(|o| !o.passed).count() {
                0 => Ok(files),
                n => Err(Error::Numeric(format!("{n} property suites failed"))),
            }
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging(cli.verbose);
    let cfg = match cli.experiment_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return EXIT_USAGE;
        }
    };
    let out = cli.out_dir.as_path();
    let result = execute(cli.command, &cfg, out).and_then(|files| write_manifest(out, cli.command.name(), &cfg, &files));
    match result {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("gdyn").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_the_config() {
        let cli = parse(&["train", "--object", "bendy-rope", "--seed", "7", "--data-size", "3", "--no-guided"]).unwrap();
        assert_eq!(cli.command, Command::Train);
        let cfg = cli.experiment_config().unwrap();
        assert_eq!(cfg.object, ObjectKind::BendyRope);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data_size(), 3);
        assert_eq!(cfg.modes(), vec![false]);
    }

    #[test]
    fn last_guidance_flag_wins() {
        let cli = parse(&["plan", "--no-guided", "--guided"]).unwrap();
        assert_eq!(cli.experiment_config().unwrap().modes(), vec![true]);
        let cli = parse(&["plan"]).unwrap();
        assert_eq!(cli.experiment_config().unwrap().modes(), vec![true, false]);
    }

    #[test]
    fn usage_errors_and_help_exit_codes() {
        assert_eq!(run(["gdyn", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["gdyn"]), EXIT_USAGE);
        assert_eq!(run(["gdyn", "train", "--object", "sphere"]), EXIT_USAGE);
        assert_eq!(run(["gdyn", "train", "--data-size", "0"]), EXIT_USAGE);
        assert_eq!(run(["gdyn", "--help"]), EXIT_OK);
        assert_eq!(run(["gdyn", "--version"]), EXIT_OK);
        assert_eq!(run(["gdyn", "train", "--config", "/nonexistent/config.json"]), EXIT_USAGE);
    }

    #[test]
    fn missing_model_is_a_runtime_failure() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["gdyn", "plan", "--out-dir", out]), EXIT_FAILURE);
    }
}
