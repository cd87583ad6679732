//! Argument parsing and dispatch. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use lidarloc_nets::Direction;
use serde_json::{json, Value};

use crate::commands;
use crate::config::Config;
use crate::error::Result;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "lidarloc",
    version,
    about = "Camera localization from RGB images via scene classification, \
    image translation to point-cloud renders and per-scene pose regression"
)]
pub struct Cli {
    /// TOML config; defaults apply to everything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the generation or training seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the scene classifier into a registry.
    TrainClassifier {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train an image translator (rgb2pc by default) into a registry.
    TrainTranslator {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "rgb2pc|pc2rgb")]
        direction: Option<Direction>,
    },
    /// Train the pose regressor of one scene, or of all scenes.
    TrainRegressor {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_name = "ID")]
        scene: Option<usize>,
    },
    /// Confusion matrix, error table and curves on the test split.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        registry: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Estimate the pose of one RGB image.
    Localize {
        #[arg(long, value_name = "PATH")]
        registry: PathBuf,
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Ground-truth point-cloud render to use instead of the translator.
        #[arg(long, value_name = "PATH")]
        pointcloud: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Translate one image with a trained translator.
    Convert {
        #[arg(long, value_name = "PATH")]
        registry: PathBuf,
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        #[arg(long, value_name = "rgb2pc|pc2rgb", default_value = "pc2rgb")]
        direction: Direction,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Summarize a dataset, registry or checkpoint.
    Inspect { path: PathBuf },
}

fn config(cli: &Cli) -> Result<Config> {
    Config::load_or_default(cli.config.as_deref())
}

pub fn execute(cli: &Cli) -> Result<Value> {
    Ok(match &cli.command {
        Command::Generate { out } => {
            let mut config = config(cli)?;
            config.synth.seed = cli.seed.unwrap_or(config.synth.seed);
            config.validate()?;
            let manifest = commands::generate(&config, out)?;
            json!({ "dataset": out, "num_scenes": manifest.num_scenes, "num_samples": manifest.samples.len() })
        }
        Command::TrainClassifier { dataset, out } => to_value(&commands::train_classifier_stage(
            &config(cli)?,
            dataset,
            out,
            cli.seed,
        )?),
        Command::TrainTranslator {
            dataset,
            out,
            direction,
        } => to_value(&commands::train_translator_stage(
            &config(cli)?,
            dataset,
            out,
            *direction,
            cli.seed,
        )?),
        Command::TrainRegressor {
            dataset,
            out,
            scene,
        } => to_value(&commands::train_regressor_stage(
            &config(cli)?,
            dataset,
            out,
            *scene,
            cli.seed,
        )?),
        Command::Evaluate {
            dataset,
            registry,
            out,
        } => {
            let e = commands::evaluate(&config(cli)?, dataset, registry, out)?;
            json!({
                "out": out,
                "test_samples": e.test_samples,
                "scene_accuracy": e.scene_accuracy,
                "error_table": { "end_to_end": e.error_table.end_to_end, "oracle": e.error_table.oracle },
                "pipeline": e.pipeline,
            })
        }
        Command::Localize {
            registry,
            image,
            pointcloud,
            out,
        } => to_value(&commands::localize(
            registry,
            image,
            pointcloud.as_deref(),
            out.as_deref(),
        )?),
        Command::Convert {
            registry,
            image,
            direction,
            out,
        } => {
            json!({ "output": commands::convert(registry, image, *direction, out)? })
        }
        Command::Inspect { path } => commands::inspect(Path::new(path))?,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

/// Parses `args` (program name first), runs the command, prints its JSON
/// summary to stdout and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            EXIT_FAILURE
        }
    }
}
