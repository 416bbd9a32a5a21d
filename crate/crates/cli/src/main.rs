//! `scriptbmi`: segment scanned sheets, build and augment a dataset, split it,
//! train and evaluate CNNs, run the preset ablation and predict BMI from a crop.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scriptbmi_core::augment::AugmentSpec;
use scriptbmi_core::dataset::{build_manifest, Split, SplitMode};
use scriptbmi_core::harness::{named_input, preset_by_tag, presets, Preset};
use scriptbmi_core::metrics::MetricsReport;
use scriptbmi_core::model::ModelConfig;
use scriptbmi_core::train::{TrainConfig, DEFAULT_SEED};
use scriptbmi_core::workflow::{
    ablate_from_manifest, augment_dataset, evaluate_from_manifest, manifest_path, predict_image, segment_dir,
    split_dataset, synth_sheets_to_disk, synth_to_disk, train_from_manifest,
};

const THREADS_ENV: &str = "SCRIPTBMI_THREADS";

#[derive(Parser)]
#[command(name = "scriptbmi", version, about = "Estimate a writer's BMI class from handwritten characters")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut scanned sheets into character crops and write a crop index.
    Segment {
        sheets_dir: PathBuf,
        out_dir: PathBuf,
        /// Components with fewer ink pixels are dropped as dust.
        #[arg(long, default_value_t = 30)]
        min_area: usize,
        #[arg(long, default_value_t = 2)]
        pad: usize,
        /// Writer table (`writer_id,height_m,weight_kg,bmi`); when given, a manifest is built over the crops.
        #[arg(long)]
        writers: Option<PathBuf>,
        /// Treat a stored BMI that disagrees with height and weight as an error.
        #[arg(long)]
        strict: bool,
    },
    /// Write each image plus its six augmented variants.
    Augment {
        /// A manifest CSV or a directory containing one.
        input: PathBuf,
        out_dir: PathBuf,
        /// Resize originals first, e.g. `224`, `64x48` or `reference`.
        #[arg(long)]
        input_size: Option<String>,
        /// JSON file overriding augmentation parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Assign train/val/test per writer and rewrite the manifest.
    Split {
        input: PathBuf,
        /// Comma-separated train,val,test fractions.
        #[arg(long, default_value = "0.7,0.15,0.15")]
        ratios: String,
        /// Keep every augmented variant in its original's split.
        #[arg(long)]
        split_before_augment: bool,
    },
    /// Train one model and write weights, loss curve, metrics and a run log.
    Train {
        input: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score saved weights on one split.
    Evaluate {
        weights: PathBuf,
        input: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Train every preset (or a chosen subset) and tabulate the results.
    Ablate {
        input: PathBuf,
        out_dir: PathBuf,
        /// Comma-separated preset names or tags; all eight when absent.
        #[arg(long)]
        presets: Option<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Classify one crop and print `class,bmi,confidence`.
    Predict {
        weights: PathBuf,
        image: PathBuf,
        input: PathBuf,
    },
    /// Render a synthetic corpus of crops, or of whole sheets with `--sheets`.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        writers: usize,
        #[arg(long, default_value_t = 26)]
        chars: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Write one 78-glyph form per writer instead of individual crops.
        #[arg(long)]
        sheets: bool,
        /// Grid cell size in pixels for `--sheets`.
        #[arg(long, default_value_t = 32)]
        cell: usize,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// A preset name or tag (`best`, `base`, `config3`, ...) or a model JSON file.
    #[arg(long, default_value = "best")]
    config: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Square size, `HxW`, `default` (224) or `reference` (144).
    #[arg(long, default_value = "default")]
    input_size: String,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let (h, w) = parse_size(&self.input_size)?;
        Ok(TrainConfig {
            batch_size: self.batch,
            max_epochs: self.epochs,
            learning_rate: self.lr,
            patience: self.patience,
            seed,
            input_size: (h, w),
            channels: self.channels,
        })
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    if let Some([_, h, w]) = named_input(s, 3) {
        return Ok((h, w));
    }
    let parse = |v: &str| v.trim().parse::<usize>().with_context(|| format!("bad input size {s:?}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => (parse(s)?, parse(s)?),
    };
    if h == 0 || w == 0 {
        bail!("input size must be positive, got {s:?}");
    }
    Ok((h, w))
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad ratios {s:?}"))?;
    parts
        .try_into()
        .map_err(|_| anyhow!("expected three ratios train,val,test, got {s:?}"))
}

fn resolve_manifest(input: &Path) -> PathBuf {
    if input.is_dir() {
        manifest_path(input)
    } else {
        input.to_path_buf()
    }
}

fn resolve_model(arg: &str) -> Result<ModelConfig> {
    if let Some(p) = preset_by_tag(arg) {
        return Ok(p.config);
    }
    let text = fs::read_to_string(arg).with_context(|| format!("{arg:?} is neither a preset nor a readable model file"))?;
    let cfg: ModelConfig = serde_json::from_str(&text).with_context(|| format!("parsing model config {arg}"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_presets(arg: Option<&str>) -> Result<Vec<Preset>> {
    match arg {
        None => Ok(presets()),
        Some(list) => list
            .split(',')
            .map(|name| preset_by_tag(name.trim()).ok_or_else(|| anyhow!("unknown preset {name:?}")))
            .collect(),
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn print_metrics(m: &MetricsReport) {
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", m.csv_row());
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let seed = cli.seed;
    match cli.command {
        Command::Segment {
            sheets_dir,
            out_dir,
            min_area,
            pad,
            writers,
            strict,
        } => {
            let summary = segment_dir(&sheets_dir, &out_dir, min_area, pad)?;
            warn_all(&summary.warnings);
            eprintln!("{} sheet(s) -> {} crop(s)", summary.sheets, summary.crops);
            if let Some(writers) = writers {
                let built = build_manifest(&out_dir, &writers, strict)?;
                warn_all(&built.warnings);
                built.manifest.save(&out_dir)?;
                eprintln!("manifest with {} row(s) written", built.manifest.rows.len());
            }
        }
        Command::Augment {
            input,
            out_dir,
            input_size,
            spec,
        } => {
            let mut aug = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<AugmentSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => AugmentSpec::default(),
            };
            aug.seed = seed;
            let size = input_size.as_deref().map(parse_size).transpose()?;
            let (m, warnings) = augment_dataset(&resolve_manifest(&input), &out_dir, &aug, size)?;
            warn_all(&warnings);
            eprintln!("{} image(s) written", m.rows.len());
        }
        Command::Split {
            input,
            ratios,
            split_before_augment,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let mode = if split_before_augment {
                SplitMode::BySource
            } else {
                SplitMode::PerImage
            };
            let (m, warnings) = split_dataset(&resolve_manifest(&input), ratios, seed, mode)?;
            warn_all(&warnings);
            let counts = m.split_counts();
            let n = |s| counts.get(&s).copied().unwrap_or(0);
            println!("train={} val={} test={}", n(Split::Train), n(Split::Val), n(Split::Test));
        }
        Command::Train {
            input,
            out_dir,
            model,
            train,
        } => {
            let model = resolve_model(&model.config)?;
            let cfg = train.config(seed)?;
            let report = train_from_manifest(&resolve_manifest(&input), &model, &cfg, &out_dir, |line| {
                eprint!("{line}")
            })?;
            print_metrics(&report.test_metrics);
        }
        Command::Evaluate {
            weights,
            input,
            split,
            batch,
        } => {
            let split: Split = split.parse()?;
            let eval = evaluate_from_manifest(&weights, &resolve_manifest(&input), split, batch)?;
            print_metrics(&eval.metrics);
        }
        Command::Ablate {
            input,
            out_dir,
            presets,
            train,
        } => {
            let presets = resolve_presets(presets.as_deref())?;
            let cfg = train.config(seed)?;
            let result = ablate_from_manifest(&resolve_manifest(&input), &presets, &cfg, &out_dir, |row| {
                match &row.outcome {
                    Ok(r) => eprintln!("{}: {}", row.preset.label(), r.test_metrics.csv_row()),
                    Err(e) => eprintln!("warning: {} failed: {e}", row.preset.label()),
                }
            })?;
            print!("{}", scriptbmi_core::harness::ablation_csv(&result));
        }
        Command::Predict { weights, image, input } => {
            println!("{}", predict_image(&weights, &image, &resolve_manifest(&input))?);
        }
        Command::Synth {
            out_dir,
            writers,
            chars,
            size,
            sheets,
            cell,
        } => {
            if sheets {
                synth_sheets_to_disk(writers, cell, seed, &out_dir)?;
                eprintln!("{writers} sheet(s) written");
            } else {
                let m = synth_to_disk(writers, chars, size, seed, &out_dir)?;
                eprintln!("{} crop(s) written", m.rows.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
