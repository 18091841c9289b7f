use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use uvcgan2::cli::{self, EvaluateArgs};
use uvcgan2::config::Preset;
use uvcgan2::data::ToySpec;
use uvcgan2::trainer::{Ablation, Direction};

/// Unpaired image-to-image translation with style-modulated UNet-ViT generators.
#[derive(Parser)]
#[command(name = "uvcgan2", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `section.key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Start from a preset instead of a file (toy, full).
    #[arg(long)]
    preset: Option<Preset>,
    /// Override one key, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> uvcgan2::Result<uvcgan2::config::ExperimentConfig> {
        cli::resolve_config(self.config.as_deref(), self.preset, &self.sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic red/green toy dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        train_count: usize,
        #[arg(long, default_value_t = 100)]
        test_count: usize,
        #[arg(long, default_value_t = 32)]
        image_size: u32,
    },
    /// Print the resolved config in canonical form.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Masked-patch inpainting pretraining of the generator.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarial training of both translation directions.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Apply one ablation (no_style_mod, no_batch_head, legacy_training).
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Translate a directory of images.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// ab or ba.
        #[arg(long, default_value = "ab")]
        direction: Direction,
        /// Use the live generator instead of the averaged one.
        #[arg(long)]
        no_ema: bool,
    },
    /// Realism and faithfulness metrics as a JSON report.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        translated: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Source images, paired with translations by file stem.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        source_landmarks: Option<PathBuf>,
        #[arg(long)]
        translated_landmarks: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
    },
    /// Image grid: one row per input, columns are input and translation.
    Grid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "ab")]
        direction: Direction,
        #[arg(long)]
        no_ema: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeToy {
            out,
            seed,
            train_count,
            test_count,
            image_size,
        } => {
            let spec = ToySpec {
                image_size,
                train_count,
                test_count,
                seed,
            };
            cli::cmd_make_toy(&out, &spec)?;
        }
        Command::Config { cfg } => print!("{}", cfg.resolve()?.to_text()),
        Command::Pretrain { cfg, out } => {
            let cfg = cfg.resolve()?;
            let ckpt = cli::cmd_pretrain(&cfg, &out).context("pretraining failed")?;
            println!("{}", ckpt.display());
        }
        Command::Train {
            cfg,
            out,
            resume,
            ablation,
        } => {
            let cfg = cfg.resolve()?;
            let ckpt = cli::cmd_train(&cfg, &out, resume.as_deref(), ablation).context("training failed")?;
            println!("{}", ckpt.display());
        }
        Command::Translate {
            checkpoint,
            input,
            output,
            direction,
            no_ema,
        } => {
            cli::cmd_translate(&checkpoint, &input, &output, direction, !no_ema)?;
        }
        Command::Evaluate {
            cfg,
            translated,
            target,
            source,
            source_landmarks,
            translated_landmarks,
            report,
        } => {
            let cfg = cfg.resolve()?;
            let args = EvaluateArgs {
                translated,
                target,
                source,
                source_landmarks,
                translated_landmarks,
                report,
            };
            let r = cli::cmd_evaluate(&cfg, &args)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Grid {
            checkpoint,
            inputs,
            output,
            direction,
            no_ema,
        } => cli::cmd_grid(&checkpoint, &inputs, &output, direction, !no_ema)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err
        .chain()
        .filter_map(|e| e.downcast_ref::<uvcgan2::Error>())
        .any(|e| e.is_config_error());
    if config {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    uvcgan2::runtime::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
