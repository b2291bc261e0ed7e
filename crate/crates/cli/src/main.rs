use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pixalign::data::Split;
use pixalign::eval::ZeroUnion;
use pixalign::trainer::Method;
use pixalign_cli::commands::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_train, render_table, AblateOptions, EvalOptions,
    GenerateOptions, TrainOptions,
};
use pixalign_cli::config::to_toml;
use pixalign_cli::CliResult;

/// Pixel-wise adversarial domain adaptation experiments.
///
/// Exit status: 0 success, 2 config error, 3 data error, 4 training failure.
#[derive(Parser)]
#[command(name = "pixalign", version)]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a toy source/target dataset from a scene spec file.
    Generate {
        /// TOML file with `n_source`, `n_target`, `n_cities` and a `[scene]` table.
        #[arg(long)]
        spec: PathBuf,
        /// New dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `scene.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one method and evaluate it on the held-out target images.
    Train {
        /// Run config (TOML).
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `method`.
        #[arg(long)]
        method: Option<Method>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate the config and print it fully resolved, without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compare training variants over several seeds.
    Ablate {
        /// Ablation config (TOML).
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate the config and print it fully resolved, without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// TOML file with `well` and `under` class id lists.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Target)]
        split: SplitArg,
        /// Count classes with an empty union as IoU 0 instead of skipping them.
        #[arg(long)]
        report_zero: bool,
        /// Write `report.json` and `iou.svg` here instead of printing the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Source,
    Target,
}

fn run(cli: Cli) -> CliResult<()> {
    let verbose = !cli.quiet;
    match cli.command {
        Command::Generate { spec, out, seed } => {
            let meta = cmd_generate(&GenerateOptions {
                spec,
                out: out.clone(),
                seed,
            })?;
            if verbose {
                eprintln!("wrote {} images to {}", meta.entries.len(), out.display());
            }
        }
        Command::Train {
            config,
            seed,
            method,
            out,
            dry_run,
        } => {
            let outcome = cmd_train(&TrainOptions {
                config,
                seed,
                method,
                output_dir: out,
                dry_run,
                verbose,
            })?;
            match outcome.report {
                None => print!("{}", to_toml(&outcome.config)?),
                Some(r) => println!(
                    "{} seed {}: mIoU {:.2} on {} {} images, results in {}",
                    r.method,
                    r.seed,
                    100.0 * r.metrics.miou.unwrap_or(0.0),
                    r.eval_images,
                    r.evaluated_on,
                    outcome.config.output_dir.display()
                ),
            }
        }
        Command::Ablate {
            config,
            out,
            dry_run,
        } => {
            let (cfg, summary) = cmd_ablate(&AblateOptions {
                config,
                output_dir: out,
                dry_run,
                verbose,
            })?;
            match summary {
                None => print!("{}", to_toml(&cfg)?),
                Some(s) => print!("{}", render_table(&s)),
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            partition,
            split,
            report_zero,
            out,
        } => {
            let print = out.is_none();
            let report = cmd_eval(&EvalOptions {
                checkpoint,
                dataset,
                partition,
                split: match split {
                    SplitArg::Source => Split::Source,
                    SplitArg::Target => Split::Target,
                },
                zero_union: if report_zero {
                    ZeroUnion::ReportZero
                } else {
                    ZeroUnion::Exclude
                },
                out,
            })?;
            if print {
                let text = serde_json::to_string_pretty(&report).map_err(pixalign::Error::from)?;
                println!("{text}");
            } else {
                println!("mIoU {:.2}", 100.0 * report.miou.unwrap_or(0.0));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code())
        }
    }
}
