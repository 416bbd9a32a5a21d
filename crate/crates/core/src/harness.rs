//! The eight ablation presets, the ablation runner and its report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::ModelConfig;
use crate::train::{train, SplitData, TrainConfig, TrainReport};

pub const DEFAULT_CLASSES: usize = 48;
pub const DEFAULT_INPUT: [usize; 3] = [3, 224, 224];
/// Input at which the base preset reproduces the reference layer shapes.
pub const REFERENCE_INPUT: [usize; 3] = [3, 144, 144];
pub const ABLATION_CSV_HEADER: &str = "config,accuracy,precision,recall,f1";

/// Resolves a named input preset: `default` (224) or `reference` (144).
pub fn named_input(name: &str, channels: usize) -> Option<[usize; 3]> {
    match name {
        "default" => Some([channels, DEFAULT_INPUT[1], DEFAULT_INPUT[2]]),
        "reference" => Some([channels, REFERENCE_INPUT[1], REFERENCE_INPUT[2]]),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    /// `config1` .. `config8`.
    pub name: String,
    pub tag: Option<&'static str>,
    pub config: ModelConfig,
}

impl Preset {
    pub fn label(&self) -> String {
        match self.tag {
            Some(t) => format!("{} ({t})", self.name),
            None => self.name.clone(),
        }
    }
}

fn preset(
    row: usize,
    tag: Option<&'static str>,
    conv: &[usize],
    conv_drop: &[u32],
    hidden: &[usize],
    hidden_drop: &[u32],
) -> Preset {
    Preset {
        name: format!("config{row}"),
        tag,
        config: ModelConfig {
            conv_kernels: conv.to_vec(),
            conv_dropout_pct: conv_drop.to_vec(),
            hidden_units: hidden.to_vec(),
            hidden_dropout_pct: hidden_drop.to_vec(),
            num_classes: DEFAULT_CLASSES,
            input: DEFAULT_INPUT,
        },
    }
}

/// The eight ablation rows in table order, at 48 classes and 3x224x224 input.
pub fn presets() -> Vec<Preset> {
    vec![
        preset(1, None, &[32, 64, 128, 256, 512], &[0, 0, 0, 0, 50], &[2048, 1024, 512, 256], &[30, 40, 50, 40]),
        preset(2, None, &[64, 128, 256, 512], &[0, 0, 0, 0], &[2048], &[50]),
        preset(3, None, &[32, 64], &[20, 30], &[256, 128], &[40, 50]),
        preset(4, Some("best"), &[64, 128, 256], &[0, 0, 0], &[512, 256, 128], &[50, 50, 50]),
        preset(5, None, &[64, 128, 256], &[0, 0, 0], &[2048], &[50]),
        preset(6, None, &[64, 128, 256, 512], &[0, 0, 0, 0], &[4096], &[50]),
        preset(7, None, &[64, 128, 256], &[30, 40, 50], &[256, 128], &[50, 50]),
        preset(8, Some("base"), &[32, 64], &[20, 30], &[256, 128], &[0, 0]),
    ]
}

pub fn preset_by_tag(tag: &str) -> Option<Preset> {
    presets()
        .into_iter()
        .find(|p| p.tag == Some(tag) || p.name == tag)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub preset: Preset,
    /// `Ok` with the run's report, or the error that stopped it.
    pub outcome: std::result::Result<TrainReport, String>,
}

impl AblationRow {
    pub fn metrics(&self) -> Option<&MetricsReport> {
        self.outcome.as_ref().ok().map(|r| &r.test_metrics)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

/// Trains every preset on the same splits and seed, adapting input shape and
/// class count to the data. A failing preset is recorded and the run continues.
pub fn run_ablation(
    presets: &[Preset],
    data: &SplitData,
    cfg: &TrainConfig,
    mut on_done: impl FnMut(&AblationRow),
) -> AblationResult {
    let mut rows = Vec::with_capacity(presets.len());
    for p in presets {
        let mut preset = p.clone();
        preset.config = preset
            .config
            .with_input(data.train.chw())
            .with_classes(data.num_classes);
        let outcome = train(&preset.config, data, cfg, |_| {})
            .map(|o| o.report)
            .map_err(|e| e.to_string());
        let row = AblationRow { preset, outcome };
        on_done(&row);
        rows.push(row);
    }
    AblationResult { rows }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

pub fn ablation_csv(result: &AblationResult) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for row in &result.rows {
        match row.metrics() {
            Some(m) => writeln!(out, "{},{}", row.preset.name, m.csv_row()),
            None => writeln!(out, "{},,,,", row.preset.name),
        }
        .expect("writing to a String");
    }
    out
}

pub fn ablation_markdown(result: &AblationResult) -> String {
    let mut out = String::from(
        "| Config | Conv layers | Kernels per conv layer | Conv dropout (%) | Hidden layers | Neurons per hidden layer | Hidden dropout (%) | Accuracy (%) | Precision (%) | Recall (%) | F1-score (%) |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for row in &result.rows {
        let c = &row.preset.config;
        let scores = match (&row.outcome, row.metrics()) {
            (_, Some(m)) => format!(
                "{:.2} | {:.2} | {:.2} | {:.2}",
                100.0 * m.accuracy,
                100.0 * m.precision_weighted,
                100.0 * m.recall_weighted,
                100.0 * m.f1_weighted
            ),
            (Err(e), None) => format!("failed: {} | | |", e.replace('|', "/")),
            (Ok(_), None) => unreachable!("metrics exist for every successful run"),
        };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            row.preset.label(),
            c.conv_kernels.len(),
            join(&c.conv_kernels),
            join(&c.conv_dropout_pct),
            c.hidden_units.len(),
            join(&c.hidden_units),
            join(&c.hidden_dropout_pct),
            scores
        )
        .expect("writing to a String");
    }
    out
}

/// Training and validation loss per epoch as a standalone SVG line chart.
pub fn loss_curve_svg(report: &TrainReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let n = report.train_loss.len().max(2);
    let finite = report
        .train_loss
        .iter()
        .chain(&report.val_loss)
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let line = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>", line(&report.train_loss));
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2\" points=\"{}\"/>", line(&report.val_loss));
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"12\">epoch</text>", w / 2.0, h - 12.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" font-size=\"12\" fill=\"#1f77b4\">train loss</text>", pad);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" font-size=\"12\" fill=\"#ff7f0e\">validation loss</text>", pad + 90.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{:.2}\" font-size=\"10\">{hi:.3}</text>", y(hi) + 4.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{:.2}\" font-size=\"10\">{lo:.3}</text>", y(lo));
    svg.push_str("</svg>\n");
    svg
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `ablation.csv`, `ablation.md` and `<config>/loss_curve.{csv,svg}` per successful run.
pub fn emit_reports(result: &AblationResult, out_dir: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Data("no ablation rows to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("ablation.csv"), &ablation_csv(result))?;
    write(&out_dir.join("ablation.md"), &ablation_markdown(result))?;
    for row in &result.rows {
        if let Ok(report) = &row.outcome {
            let dir = out_dir.join(&row.preset.name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write(&dir.join("loss_curve.csv"), &report.loss_curve_csv())?;
            write(&dir.join("loss_curve.svg"), &loss_curve_svg(report))?;
        }
    }
    Ok(())
}
