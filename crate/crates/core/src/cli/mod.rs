//! Command-line front end: `run`, `validate` and `list-experiments`.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure at run time.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::{load_value, parse, EXPERIMENTS};
use run::{advisories, check, execute, resolve, Artifacts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "powerlaw", version, about = "Simulate and cross-check the power-law SGD diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment named in a config and write its artifacts.
    Run(ConfigArgs),
    /// Check a config and print advisories without running it.
    Validate(ConfigArgs),
    /// List the experiment kinds a config can name.
    ListExperiments,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    positional: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "positional")]
    config: Option<PathBuf>,
    /// Dotted-path assignment applied after parsing, e.g. simulation.step=0.001.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (sets output.directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed (sets simulation.base_seed).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn path(&self) -> &Path {
        self.config.as_deref().or(self.positional.as_deref()).expect("clap requires one")
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERIC
    }
}

fn prepare(args: &ConfigArgs) -> Result<(config::ExperimentConfig, crate::model::Model)> {
    let value = load_value(args.path(), &args.overrides, args.seed, args.out.as_deref())?;
    let (cfg, model) = resolve(parse(value)?)?;
    check(&cfg, &model)?;
    Ok((cfg, model))
}

/// Runs the CLI on `args` (including the program name), writing to the
/// given streams, and returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::ListExperiments => {
            for (name, about) in EXPERIMENTS {
                let _ = writeln!(stdout, "{name:<12}{about}");
            }
            Ok(())
        }
        Command::Validate(args) => prepare(&args).map(|(cfg, model)| {
            for line in advisories(&cfg, &model) {
                let _ = writeln!(stdout, "{line}");
            }
        }),
        Command::Run(args) => prepare(&args).and_then(|(cfg, model)| {
            let mut out = Artifacts::new(Path::new(&cfg.output.directory), &cfg.output.formats)?;
            execute(&cfg, &model, &mut out)?;
            for p in out.written() {
                let _ = writeln!(stdout, "wrote {}", p.display());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
