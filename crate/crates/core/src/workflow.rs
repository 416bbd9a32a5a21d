//! On-disk pipelines behind each command: synthesize, segment, augment,
//! split, train, evaluate, predict and ablate.

use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{augment_all, check_augmented_count, AugmentSpec, VARIANT_SUFFIXES};
use crate::dataset::{
    build_manifest, class_bmi_table, predict_bmi, save_writers, split, BmiPrediction, Manifest, ManifestRow,
    Split, SplitMode, MANIFEST_FILE, WRITERS_FILE,
};
use crate::error::{Error, Result};
use crate::harness::{emit_reports, run_ablation, AblationResult, AblationRow, Preset};
use crate::imaging::{
    denormalize, load_image, median_denoise, normalize, resize_bilinear, save_image, segment_sheet, Image,
};
use crate::model::{ModelConfig, Network};
use crate::par::*;
use crate::rng::RngStream;
use crate::synth::{synth_dataset, synth_sheet};
use crate::tensor::Tensor;
use crate::train::{evaluate, train, Evaluation, Samples, SplitData, TrainConfig, TrainReport};
use crate::weights::{load_weights, save_weights};

pub const CROP_INDEX_FILE: &str = "crops.csv";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_LOG_FILE: &str = "run.log";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && extensions.contains(&ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Resizes when needed, converts channels and scales to [0, 1].
pub fn prepare_image(img: &Image, chw: [usize; 3]) -> Result<Tensor> {
    let [c, h, w] = chw;
    let resized = resize_bilinear(img, h, w)?;
    Ok(normalize(&resized.with_channels(c)?))
}

#[derive(Debug, Default)]
pub struct SegmentSummary {
    pub sheets: usize,
    pub crops: usize,
    pub warnings: Vec<String>,
}

/// Segments every `.ppm`/`.pgm` sheet in `sheets_dir` into denoised crops at
/// `out_dir/<sheet_stem>/<seq>.ppm` and writes the crop index.
pub fn segment_dir(sheets_dir: &Path, out_dir: &Path, min_area: usize, pad: usize) -> Result<SegmentSummary> {
    let sheets = sorted_files(sheets_dir, &["ppm", "pgm", "pnm"])?;
    let mut summary = SegmentSummary {
        sheets: sheets.len(),
        ..Default::default()
    };
    if sheets.is_empty() {
        summary.warnings.push(format!("no sheets found in {}", sheets_dir.display()));
    }
    let segmented: Vec<_> = sheets
        .par_iter()
        .map(|path| segment_sheet(&load_image(path)?, path, min_area, pad))
        .collect::<Result<_>>()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let index_path = out_dir.join(CROP_INDEX_FILE);
    let mut index = csv::Writer::from_path(&index_path)?;
    index.write_record(["sheet", "seq", "x", "y", "w", "h"])?;
    for (path, seg) in sheets.iter().zip(segmented) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sheet");
        let sheet_name = path.file_name().and_then(|s| s.to_str()).unwrap_or(stem);
        summary.warnings.extend(seg.warnings);
        for crop in seg.crops {
            let b = crop.bounding_box;
            save_image(
                &median_denoise(&crop.image),
                &out_dir.join(stem).join(format!("{}.ppm", crop.sequence_index)),
            )?;
            index.write_record([
                sheet_name.to_string(),
                crop.sequence_index.to_string(),
                b.x.to_string(),
                b.y.to_string(),
                b.w.to_string(),
                b.h.to_string(),
            ])?;
            summary.crops += 1;
        }
    }
    index.flush().map_err(|e| Error::io(&index_path, e))?;
    Ok(summary)
}

fn with_suffix(rel: &str, suffix: &str) -> String {
    match rel.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}{suffix}.{ext}"),
        None => format!("{rel}{suffix}"),
    }
}

/// Writes each original (resized to `size` if given) plus its six variants to
/// `out_dir`, mirroring the input layout, with a manifest listing all of them.
/// Variants inherit their original's split.
pub fn augment_dataset(
    manifest_csv: &Path,
    out_dir: &Path,
    spec: &AugmentSpec,
    size: Option<(usize, usize)>,
) -> Result<(Manifest, Vec<String>)> {
    spec.validate()?;
    let m = Manifest::load(manifest_csv)?;
    let mut warnings = Vec::new();
    let originals: Vec<&ManifestRow> = m.rows.iter().filter(|r| r.variant().is_none()).collect();
    if originals.len() != m.rows.len() {
        warnings.push(format!(
            "ignoring {} already augmented row(s)",
            m.rows.len() - originals.len()
        ));
    }
    let produced: Vec<Vec<ManifestRow>> = originals
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut img = load_image(&m.path_of(row))?;
            if let Some((h, w)) = size {
                img = resize_bilinear(&img, h, w)?;
            }
            let outputs = augment_all(&normalize(&img), spec, i as u64)?;
            let names = std::iter::once(row.image_path.clone())
                .chain(VARIANT_SUFFIXES.iter().map(|s| with_suffix(&row.image_path, s)));
            let mut rows = Vec::with_capacity(outputs.len());
            for (t, name) in outputs.iter().zip(names) {
                save_image(&denormalize(t)?, &out_dir.join(&name))?;
                rows.push(ManifestRow {
                    image_path: name,
                    ..(*row).clone()
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ManifestRow> = produced.into_iter().flatten().collect();
    check_augmented_count(originals.len(), rows.len())?;
    let out = Manifest::new(out_dir.to_path_buf(), m.writers.clone(), rows)?;
    out.save(out_dir)?;
    let log = format!(
        "originals={}\noutputs={}\nspec={}\n",
        originals.len(),
        out.rows.len(),
        serde_json::to_string(spec)?
    );
    write_file(&out_dir.join("augment.log"), log)?;
    Ok((out, warnings))
}

/// Assigns splits in place and rewrites the manifest.
pub fn split_dataset(manifest_csv: &Path, ratios: [f64; 3], seed: u64, mode: SplitMode) -> Result<(Manifest, Vec<String>)> {
    let mut m = Manifest::load(manifest_csv)?;
    let warnings = split(&mut m, ratios, &RngStream::new(seed, "split", 0), mode)?;
    m.save(&m.root.clone())?;
    Ok((m, warnings))
}

fn load_samples(m: &Manifest, rows: &[&ManifestRow], chw: [usize; 3]) -> Result<Samples> {
    let prepared: Vec<(Tensor, usize)> = rows
        .par_iter()
        .map(|r| Ok((prepare_image(&load_image(&m.path_of(r))?, chw)?, m.class_of(r.writer_id)?)))
        .collect::<Result<_>>()?;
    let mut samples = Samples::new(chw);
    for (t, label) in &prepared {
        samples.push(t, *label)?;
    }
    Ok(samples)
}

/// Loads the three splits of a manifest at input shape `chw`.
pub fn load_split_data(m: &Manifest, chw: [usize; 3]) -> Result<SplitData> {
    if let Some(r) = m.rows.iter().find(|r| r.split == Split::Unassigned) {
        return Err(Error::Config(format!(
            "{} has no split assigned; run the split step first",
            r.image_path
        )));
    }
    let pick = |s: Split| m.rows_in(s).collect::<Vec<_>>();
    Ok(SplitData {
        train: load_samples(m, &pick(Split::Train), chw)?,
        val: load_samples(m, &pick(Split::Val), chw)?,
        test: load_samples(m, &pick(Split::Test), chw)?,
        num_classes: m.num_classes(),
    })
}

/// Trains on a split manifest and writes weights, loss curve, metrics and a run log to `out_dir`.
pub fn train_from_manifest(
    manifest_csv: &Path,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<TrainReport> {
    cfg.validate()?;
    let m = Manifest::load(manifest_csv)?;
    let model = model.clone().with_input(cfg.input_shape()).with_classes(m.num_classes());
    let data = load_split_data(&m, cfg.input_shape())?;
    let mut log = format!(
        "model={}\nbatch_size={}\nmax_epochs={}\nlearning_rate={}\npatience={}\nseed={}\ntrain={} val={} test={}\n",
        serde_json::to_string(&model)?,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.learning_rate,
        cfg.patience,
        cfg.seed,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    progress(&log);
    let outcome = train(&model, &data, cfg, |rec| {
        let line = format!(
            "epoch={} train_loss={:.6} val_loss={:.6} val_acc={:.4}\n",
            rec.epoch, rec.train_loss, rec.val_loss, rec.val_acc
        );
        progress(&line);
        log.push_str(&line);
    })?;
    let r = &outcome.report;
    log.push_str(&format!(
        "steps_per_epoch={}\ntotal_steps={}\nbest_epoch={}\nstopped_epoch={}\ntest={}\n",
        r.steps_per_epoch,
        r.total_steps,
        r.best_epoch,
        r.stopped_epoch,
        r.test_metrics.csv_row()
    ));
    save_weights(&outcome.network, &out_dir.join(WEIGHTS_FILE))?;
    write_file(&out_dir.join(LOSS_CURVE_FILE), r.loss_curve_csv())?;
    write_file(&out_dir.join(METRICS_FILE), r.metrics_csv())?;
    write_file(&out_dir.join("loss_curve.svg"), crate::harness::loss_curve_svg(r))?;
    write_file(&out_dir.join("report.json"), serde_json::to_string_pretty(r)?)?;
    write_file(&out_dir.join(RUN_LOG_FILE), log)?;
    Ok(outcome.report)
}

fn check_classes(net: &Network, m: &Manifest) -> Result<()> {
    if net.num_classes() != m.num_classes() {
        return Err(Error::Compatibility(format!(
            "weights predict {} classes but the manifest has {} writers",
            net.num_classes(),
            m.num_classes()
        )));
    }
    Ok(())
}

pub fn evaluate_from_manifest(weights: &Path, manifest_csv: &Path, split: Split, batch_size: usize) -> Result<Evaluation> {
    let mut net = load_weights(weights)?;
    let m = Manifest::load(manifest_csv)?;
    check_classes(&net, &m)?;
    let rows: Vec<&ManifestRow> = m.rows_in(split).collect();
    let samples = load_samples(&m, &rows, net.config().input)?;
    evaluate(&mut net, &samples, batch_size)
}

/// Denoise, resize, normalize, classify, then look up the class BMI.
pub fn predict_image(weights: &Path, image: &Path, manifest_csv: &Path) -> Result<BmiPrediction> {
    let mut net = load_weights(weights)?;
    let m = Manifest::load(manifest_csv)?;
    check_classes(&net, &m)?;
    let table = class_bmi_table(&m)?;
    let chw = net.config().input;
    let x = prepare_image(&median_denoise(&load_image(image)?), chw)?;
    let batch = Tensor::from_vec(&[1, chw[0], chw[1], chw[2]], x.into_data())?;
    let probs = net.predict(&batch)?;
    predict_bmi(probs.data(), &table)
}

pub fn ablate_from_manifest(
    manifest_csv: &Path,
    presets: &[Preset],
    cfg: &TrainConfig,
    out_dir: &Path,
    on_done: impl FnMut(&AblationRow),
) -> Result<AblationResult> {
    cfg.validate()?;
    let m = Manifest::load(manifest_csv)?;
    let data = load_split_data(&m, cfg.input_shape())?;
    let result = run_ablation(presets, &data, cfg, on_done);
    emit_reports(&result, out_dir)?;
    Ok(result)
}

/// Renders a synthetic corpus of `<writer>/<char>_<rep>.ppm` crops with its
/// writer table and manifest.
pub fn synth_to_disk(n_writers: usize, chars_per_writer: usize, image_size: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    let corpus = synth_dataset(n_writers, chars_per_writer, image_size, &RngStream::new(seed, "synth", 0))?;
    corpus
        .images
        .par_iter()
        .map(|s| save_image(&s.image, &out_dir.join(s.relative_path())))
        .collect::<Result<Vec<()>>>()?;
    let writers_csv = out_dir.join(WRITERS_FILE);
    save_writers(&corpus.writers, &writers_csv)?;
    let built = build_manifest(out_dir, &writers_csv, true)?;
    built.manifest.save(out_dir)?;
    Ok(built.manifest)
}

/// Writes one scanned-form sheet per writer as `<writer>.ppm` plus the writer table.
pub fn synth_sheets_to_disk(n_writers: usize, cell: usize, seed: u64, out_dir: &Path) -> Result<()> {
    let corpus = synth_dataset(n_writers, 0, 16, &RngStream::new(seed, "synth", 0))?;
    for (w, style) in corpus.styles.iter().enumerate() {
        let (sheet, _) = synth_sheet(style, cell, &RngStream::new(seed, "sheet", w as u64))?;
        save_image(&sheet, &out_dir.join(format!("{w:02}.ppm")))?;
    }
    save_writers(&corpus.writers, &out_dir.join(WRITERS_FILE))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
