//! Command-line front end. Every command reads the same configuration
//! (defaults, then `--config`, then `--set key=value`), validates it before
//! any work, and echoes the effective configuration into its output
//! directory.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 contract violation,
//! 5 malformed input, 6 I/O or image error, 7 training failure, 8 stage
//! order, 9 undefined metric.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{parse_override, LossKind, PipelineConfig};
use crate::data::{export_cls_dataset, export_seg_dataset, generate_synthetic_dataset};
use crate::error::{Error, Result};
use crate::pipeline::{
    compare_losses, fine_tune, sweep, Datasets, Pipeline, Pretrained, Stage, SweepParameter, EFFECTIVE_CONFIG_FILE,
};
use crate::report;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "MBDCNN_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-scale defaults (224×224 inputs, 500 epochs).
    Paper,
    /// Small network and 64×64 inputs for the synthetic generator.
    Desk,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set loss.k_hard=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Built-in defaults the file and overrides apply to.
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    preset: Preset,
    /// More log output (repeat for debug).
    #[arg(long, short, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Parser)]
#[command(name = "mbdcnn", version, about = "Mutual-bootstrapping lesion segmentation and classification")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Write a synthetic dataset in the on-disk layout.
    SynthData(Common),
    /// Stage 1: train the coarse segmenter.
    TrainCoarse(Common),
    /// Stage 2: coarse masks for the classification images.
    GenMasks(Common),
    /// Stage 3: train the mask classifier.
    TrainCls(Common),
    /// Stage 4: localization maps for the segmentation images.
    GenCams(Common),
    /// Stage 5: train the enhanced segmenter.
    TrainEnhanced(Common),
    /// Run (or resume) all stages and write the reports.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage (train_coarse, generate_masks, ...).
        #[arg(long, value_name = "STAGE")]
        stop_after: Option<String>,
    },
    /// Evaluate a finished run on the test split.
    Evaluate(Common),
    /// Vary one parameter and tabulate the resulting metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// k_hard, margin, lambda_weight, train_fraction_seg or train_fraction_cls.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Train the coarse segmenter once per loss.
    CompareLosses {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "wce,dice,focal,hybrid")]
        losses: Vec<String>,
    },
    /// Cross-validated fine-tuning of a finished run on the configured data.
    FineTune {
        #[command(flatten)]
        common: Common,
        /// Output directory of the pretrained run.
        #[arg(long, value_name = "DIR")]
        pretrained: PathBuf,
        #[arg(long, default_value_t = 4)]
        folds: usize,
    },
    /// Regenerate tables, curves and overlays of a finished run.
    Report(Common),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SynthData,
    Stage(Stage),
    Pipeline { stop_after: Option<Stage> },
    Evaluate,
    Sweep { parameter: SweepParameter, values: Vec<f64> },
    CompareLosses { losses: Vec<LossKind> },
    FineTune { pretrained: PathBuf, folds: usize },
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Stage(Stage::TrainCoarse) => "train-coarse",
            Command::Stage(Stage::GenerateMasks) => "gen-masks",
            Command::Stage(Stage::TrainClassifier) => "train-cls",
            Command::Stage(Stage::GenerateCams) => "gen-cams",
            Command::Stage(Stage::TrainEnhanced) => "train-enhanced",
            Command::Pipeline { .. } => "pipeline",
            Command::Evaluate => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::CompareLosses { .. } => "compare-losses",
            Command::FineTune { .. } => "fine-tune",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub verbosity: u8,
}

fn clap_command() -> clap::Command {
    let defaults = PipelineConfig::default().to_toml().unwrap_or_default();
    Cli::command().after_long_help(format!(
        "Configuration keys and their defaults (set with --config FILE or --set section.key=value):\n\n{defaults}\n\
         The output directory defaults to ${OUTPUT_ROOT_ENV}/<command>, or runs/<command>.\n\
         Exit codes: 0 ok, 2 usage, 3 config, 4 contract, 5 format, 6 io, 7 training, 8 stage order, 9 undefined metric."
    ))
}

fn parse_cli<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = clap_command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn base_config(preset: Preset) -> PipelineConfig {
    match preset {
        Preset::Paper => PipelineConfig::default(),
        Preset::Desk => PipelineConfig::synthetic_desk(),
    }
}

/// Parses `args` (including the program name) and resolves the
/// configuration. Nothing is written.
pub fn parse_and_validate<I, T>(args: I) -> Result<(CommandSpec, PipelineConfig)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = parse_cli(args).map_err(|e| Error::Usage(e.render().to_string()))?;
    let (command, common) = match cli.command {
        Sub::SynthData(c) => (Command::SynthData, c),
        Sub::TrainCoarse(c) => (Command::Stage(Stage::TrainCoarse), c),
        Sub::GenMasks(c) => (Command::Stage(Stage::GenerateMasks), c),
        Sub::TrainCls(c) => (Command::Stage(Stage::TrainClassifier), c),
        Sub::GenCams(c) => (Command::Stage(Stage::GenerateCams), c),
        Sub::TrainEnhanced(c) => (Command::Stage(Stage::TrainEnhanced), c),
        Sub::Pipeline { common, stop_after } => (
            Command::Pipeline {
                stop_after: stop_after.as_deref().map(Stage::parse).transpose()?,
            },
            common,
        ),
        Sub::Evaluate(c) => (Command::Evaluate, c),
        Sub::Sweep {
            common,
            parameter,
            values,
        } => {
            let parameter = SweepParameter::parse(&parameter)?;
            let values = if values.is_empty() { parameter.default_values() } else { values };
            (Command::Sweep { parameter, values }, common)
        }
        Sub::CompareLosses { common, losses } => (
            Command::CompareLosses {
                losses: losses.iter().map(|l| LossKind::parse(l.trim())).collect::<Result<_>>()?,
            },
            common,
        ),
        Sub::FineTune {
            common,
            pretrained,
            folds,
        } => (Command::FineTune { pretrained, folds }, common),
        Sub::Report(c) => (Command::Report, c),
    };
    let overrides = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let mut config = PipelineConfig::resolve_from(base_config(common.preset), common.config.as_deref(), &overrides)?;
    let output_dir = match (&common.output, config.output_dir.as_os_str().is_empty()) {
        (Some(o), _) => o.clone(),
        (None, false) => config.output_dir.clone(),
        (None, true) => std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command.name()),
    };
    config.output_dir = output_dir.clone();
    Ok((
        CommandSpec {
            command,
            config_path: common.config,
            overrides,
            output_dir,
            preset: common.preset,
            verbosity: common.verbose,
        },
        config,
    ))
}

fn echo_config(dir: &Path, config: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn write_full_report(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let reports = p.final_reports()?;
    let overlays = p.overlay_panels(p.config.eval.overlay_samples)?;
    let written = report::emit_run_report(&p.dir.join("reports"), &reports, &p.data.class_names, &p.curves()?, &overlays)?;
    print!(
        "{}",
        report::seg_summary_table(&[("coarse", &reports.coarse.mean), ("enhanced", &reports.enhanced.mean)])
    );
    print!("{}", report::cls_summary_table(&reports.classifier, &p.data.class_names));
    Ok(written)
}

/// Runs a parsed command.
pub fn execute(spec: &CommandSpec, config: PipelineConfig) -> Result<()> {
    let out = spec.output_dir.clone();
    match &spec.command {
        Command::SynthData => {
            echo_config(&out, &config)?;
            let ds = generate_synthetic_dataset(&config.synthetic_config())?;
            export_seg_dataset(&out.join("seg"), &ds.seg, &ds.class_names)?;
            export_cls_dataset(&out.join("cls"), &ds.cls, &ds.class_names)?;
            println!(
                "wrote {} segmentation and {} classification images to {}",
                ds.seg.len(),
                ds.cls.len(),
                out.display()
            );
        }
        Command::Stage(stage) => {
            let mut p = Pipeline::open(config, &out)?;
            p.run_stage(*stage)?;
            let r = p.state.record(*stage);
            match (r.best_epoch, r.best_metric, r.items) {
                (Some(e), Some(m), _) => println!("{stage}: best epoch {e}, validation metric {m:.4}"),
                (_, _, Some(n)) => println!("{stage}: {n} maps written"),
                _ => println!("{stage}: done"),
            }
        }
        Command::Pipeline { stop_after } => {
            let mut p = Pipeline::open(config, &out)?;
            p.run(*stop_after)?;
            if p.state.all_complete() {
                write_full_report(&p)?;
            } else {
                println!("stopped after {}", stop_after.map(|s| s.name()).unwrap_or("?"));
            }
        }
        Command::Evaluate => {
            let p = Pipeline::open(config, &out)?;
            let reports = p.final_reports()?;
            let dir = out.join("reports");
            report::write_seg_report(&dir.join("coarse_per_image.csv"), &reports.coarse)?;
            report::write_seg_report(&dir.join("enhanced_per_image.csv"), &reports.enhanced)?;
            report::write_cls_report(&dir.join("classification.csv"), &reports.classifier, &p.data.class_names)?;
            print!(
                "{}",
                report::seg_summary_table(&[("coarse", &reports.coarse.mean), ("enhanced", &reports.enhanced.mean)])
            );
            print!("{}", report::cls_summary_table(&reports.classifier, &p.data.class_names));
        }
        Command::Report => {
            let p = Pipeline::open(config, &out)?;
            for f in write_full_report(&p)? {
                println!("{}", f.display());
            }
        }
        Command::Sweep { parameter, values } => {
            echo_config(&out, &config)?;
            let data = Datasets::load(&config)?;
            let table = sweep(&config, &data, *parameter, values)?;
            for f in report::write_sweep(&out, &table)? {
                println!("{}", f.display());
            }
        }
        Command::CompareLosses { losses } => {
            echo_config(&out, &config)?;
            let data = Datasets::load_for_run(&config)?;
            let table = compare_losses(&config, &data, losses)?;
            report::write_loss_table(&out, &table)?;
            let rows: Vec<_> = table.rows.iter().filter_map(|r| r.scores.as_ref().map(|s| (r.loss.as_str(), s))).collect();
            print!("{}", report::seg_summary_table(&rows));
        }
        Command::FineTune { pretrained, folds } => {
            echo_config(&out, &config)?;
            let models = Pretrained::load(pretrained)?;
            let data = Datasets::load(&config)?;
            let r = fine_tune(&config, &models, &data, *folds)?;
            report::write_fine_tune(&out, &r)?;
            println!(
                "mean enhanced JA over {} folds: zero-shot {:.4}, fine-tuned {:.4}",
                r.folds.len(),
                r.mean_zero_shot_ja,
                r.mean_fine_tuned_ja
            );
        }
    }
    Ok(())
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses, runs and maps the outcome to a process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = parse_cli(args.clone()) {
        let code = if e.use_stderr() { Error::Usage(String::new()).exit_code() } else { 0 };
        let _ = e.print();
        return code;
    }
    let result = parse_and_validate(args).and_then(|(spec, config)| {
        init_logging(spec.verbosity);
        execute(&spec, config)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
