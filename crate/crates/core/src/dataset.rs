//! Writer/BMI bookkeeping, manifest CSVs and the stratified split.
//!
//! A class is a writer. Class indices follow ascending writer id, so two
//! writers with the same BMI are still distinct classes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::VARIANT_SUFFIXES;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const WRITERS_FILE: &str = "writers.csv";
pub const BMI_TOLERANCE: f64 = 0.01;
pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

pub fn bmi(height_m: f64, weight_kg: f64) -> Result<f64> {
    if !(height_m > 0.0) || !(weight_kg > 0.0) {
        return Err(Error::Range(format!(
            "height and weight must be positive, got {height_m} m and {weight_kg} kg"
        )));
    }
    Ok(weight_kg / (height_m * height_m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterRecord {
    pub writer_id: u32,
    pub height_m: f64,
    pub weight_kg: f64,
    pub bmi: f64,
    #[serde(skip)]
    pub class_index: usize,
}

impl WriterRecord {
    pub fn bmi_mismatch(&self) -> Result<f64> {
        Ok((self.bmi - bmi(self.height_m, self.weight_kg)?).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Relative to the manifest's root directory.
    pub image_path: String,
    pub writer_id: u32,
    pub char_label: char,
    pub repetition: u32,
    pub split: Split,
}

impl ManifestRow {
    /// `a_1_blur.ppm` -> `Some("_blur")`, originals -> `None`.
    pub fn variant(&self) -> Option<&'static str> {
        let stem = Path::new(&self.image_path).file_stem()?.to_str()?;
        VARIANT_SUFFIXES.iter().copied().find(|s| stem.ends_with(s))
    }

    /// Path of the original crop this row derives from.
    pub fn source_key(&self) -> String {
        match self.variant() {
            Some(suffix) => self.image_path.replacen(&format!("{suffix}."), ".", 1),
            None => self.image_path.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub writers: Vec<WriterRecord>,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Sorts writers by id and assigns class indices in that order.
    pub fn new(root: PathBuf, mut writers: Vec<WriterRecord>, rows: Vec<ManifestRow>) -> Result<Self> {
        writers.sort_by_key(|w| w.writer_id);
        for pair in writers.windows(2) {
            if pair[0].writer_id == pair[1].writer_id {
                return Err(Error::Manifest(format!("writer {} listed twice", pair[0].writer_id)));
            }
        }
        for (i, w) in writers.iter_mut().enumerate() {
            w.class_index = i;
        }
        Ok(Manifest { root, writers, rows })
    }

    pub fn num_classes(&self) -> usize {
        self.writers.len()
    }

    pub fn class_of(&self, writer_id: u32) -> Result<usize> {
        self.writers
            .binary_search_by_key(&writer_id, |w| w.writer_id)
            .map_err(|_| Error::Manifest(format!("writer {writer_id} is not in the writer table")))
    }

    pub fn path_of(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.image_path)
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    /// Unique paths, known writers, and (optionally) files present on disk.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(&r.image_path) {
                problems.push(format!("duplicate image path {}", r.image_path));
            }
            if self.class_of(r.writer_id).is_err() {
                problems.push(format!("{}: writer {} not in writer table", r.image_path, r.writer_id));
            }
            if check_files && !self.path_of(r).is_file() {
                problems.push(format!("{}: file not found", r.image_path));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(problems.join("; ")))
        }
    }

    /// Writes `manifest.csv` and `writers.csv` into `dir`; image paths stay relative to `root`,
    /// so `dir` should be the root unless the rows are rewritten.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["image_path", "writer_id", "char_label", "repetition", "split"])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
        save_writers(&self.writers, &dir.join(WRITERS_FILE))
    }

    /// Reads `manifest.csv` and the sibling `writers.csv`; the manifest's directory becomes the root.
    pub fn load(manifest_csv: &Path) -> Result<Manifest> {
        let root = manifest_csv.parent().map(Path::to_path_buf).unwrap_or_default();
        let writers = load_writers(&root.join(WRITERS_FILE))?;
        let mut rdr = csv::Reader::from_path(manifest_csv).map_err(|e| map_csv_open(manifest_csv, e))?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Manifest::new(root, writers, rows)
    }
}

fn map_csv_open(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    }
}

pub fn load_writers(path: &Path) -> Result<Vec<WriterRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| map_csv_open(path, e))?;
    let mut out: Vec<WriterRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    out.sort_by_key(|w| w.writer_id);
    for (i, w) in out.iter_mut().enumerate() {
        w.class_index = i;
    }
    Ok(out)
}

pub fn save_writers(writers: &[WriterRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in writers {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Letters per form row and repetitions of each letter on a collection form.
pub const FORM_LETTERS: usize = 26;
pub const FORM_REPETITIONS: usize = 3;

/// Letter and repetition at reading-order position `seq` of a form: letters
/// cycle a..z, repetitions count up.
pub fn form_slot(seq: usize) -> (char, u32) {
    ((b'a' + (seq % FORM_LETTERS) as u8) as char, (seq / FORM_LETTERS + 1) as u32)
}

/// Parses `<char>_<rep>.ppm`, or a segmenter's `<seq>.ppm` read as a form slot,
/// optionally with a variant suffix before the extension.
fn parse_crop_name(name: &str) -> Option<(char, u32)> {
    let stem = name.strip_suffix(".ppm")?;
    let stem = VARIANT_SUFFIXES
        .iter()
        .find_map(|s| stem.strip_suffix(s))
        .unwrap_or(stem);
    if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
        let seq: usize = stem.parse().ok()?;
        return (seq < FORM_LETTERS * FORM_REPETITIONS).then(|| form_slot(seq));
    }
    let (ch, rep) = stem.split_once('_')?;
    let mut chars = ch.chars();
    let c = chars.next().filter(|c| c.is_ascii_lowercase())?;
    if chars.next().is_some() {
        return None;
    }
    Some((c, rep.parse().ok()?))
}

#[derive(Debug)]
pub struct ManifestBuild {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// Scans `crop_dir/<writer>/<char>_<rep>.ppm` and pairs it with the writer table.
///
/// Stored BMIs off by more than [`BMI_TOLERANCE`] are warnings, or a validation
/// error listing every offending writer when `strict` is set.
pub fn build_manifest(crop_dir: &Path, writer_csv: &Path, strict: bool) -> Result<ManifestBuild> {
    let writers = load_writers(writer_csv)?;
    let mut warnings = Vec::new();
    let mut mismatches = Vec::new();
    for w in &writers {
        let diff = w.bmi_mismatch()?;
        if diff > BMI_TOLERANCE {
            mismatches.push(format!(
                "writer {}: stored BMI {} but {} kg / ({} m)^2 = {:.4}",
                w.writer_id,
                w.bmi,
                w.weight_kg,
                w.height_m,
                bmi(w.height_m, w.weight_kg)?
            ));
        }
    }
    if strict && !mismatches.is_empty() {
        return Err(Error::Validation(mismatches));
    }
    warnings.extend(mismatches);

    let known: HashSet<u32> = writers.iter().map(|w| w.writer_id).collect();
    let mut rows = Vec::new();
    let mut orphans = Vec::new();
    let mut dirs: Vec<_> = fs::read_dir(crop_dir)
        .map_err(|e| Error::io(crop_dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(crop_dir, e))?;
    dirs.sort_by_key(|d| d.file_name());
    for dir in dirs {
        if !dir.path().is_dir() {
            continue;
        }
        let dir_name = dir.file_name().to_string_lossy().into_owned();
        let Ok(writer_id) = dir_name.parse::<u32>() else {
            warnings.push(format!("skipping directory {dir_name}: not a writer id"));
            continue;
        };
        let mut files: Vec<String> = fs::read_dir(dir.path())
            .map_err(|e| Error::io(dir.path(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".ppm"))
            .collect();
        files.sort();
        for name in files {
            let Some((char_label, repetition)) = parse_crop_name(&name) else {
                warnings.push(format!("skipping {dir_name}/{name}: not <char>_<rep>.ppm"));
                continue;
            };
            let image_path = format!("{dir_name}/{name}");
            if !known.contains(&writer_id) {
                orphans.push(image_path);
                continue;
            }
            rows.push(ManifestRow {
                image_path,
                writer_id,
                char_label,
                repetition,
                split: Split::Unassigned,
            });
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Manifest(format!(
            "{} image(s) belong to writers missing from the table: {}",
            orphans.len(),
            orphans.join(", ")
        )));
    }
    if rows.is_empty() {
        warnings.push(format!("no crops found under {}", crop_dir.display()));
    }
    Ok(ManifestBuild {
        manifest: Manifest::new(crop_dir.to_path_buf(), writers, rows)?,
        warnings,
    })
}

/// Validation and test counts for a class of `n` images: `floor(ratio * n)` each.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let test = (ratios[2] * n as f64 + 1e-9).floor() as usize;
    (n - val - test, val, test)
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    Ok(())
}

/// How rows are grouped before the stratified split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Every image is split on its own, augmented variants included.
    #[default]
    PerImage,
    /// Originals are split and their augmented variants follow them, as if the
    /// split had been made before augmentation.
    BySource,
}

/// Stratified split by writer. Within each class the split units (images or
/// source crops) are ordered by path, shuffled with a per-class derived
/// stream, then cut into val, test and train. Returns warnings for classes
/// too small to stratify.
pub fn split(manifest: &mut Manifest, ratios: [f64; 3], stream: &RngStream, mode: SplitMode) -> Result<Vec<String>> {
    validate_ratios(ratios)?;
    let key = |r: &ManifestRow| match mode {
        SplitMode::PerImage => r.image_path.clone(),
        SplitMode::BySource => r.source_key(),
    };
    let mut by_class: BTreeMap<u32, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        by_class.entry(r.writer_id).or_default().entry(key(r)).or_default().push(i);
    }
    let mut warnings = Vec::new();
    for (writer, groups) in by_class {
        let mut units: Vec<Vec<usize>> = groups.into_values().collect();
        let assign = |units: &[Vec<usize>], rows: &mut [ManifestRow], s: Split| {
            for &i in units.iter().flatten() {
                rows[i].split = s;
            }
        };
        if units.len() < 3 {
            warnings.push(format!("writer {writer} has {} split unit(s); all assigned to train", units.len()));
            assign(&units, &mut manifest.rows, Split::Train);
            continue;
        }
        stream.derive("class", writer as u64).shuffle(&mut units);
        let (_, n_val, n_test) = split_sizes(units.len(), ratios);
        assign(&units[..n_val], &mut manifest.rows, Split::Val);
        assign(&units[n_val..n_val + n_test], &mut manifest.rows, Split::Test);
        assign(&units[n_val + n_test..], &mut manifest.rows, Split::Train);
    }
    Ok(warnings)
}

/// Class index -> BMI, in class order.
pub fn class_bmi_table(manifest: &Manifest) -> Result<Vec<f64>> {
    let mut table = vec![None; manifest.writers.len()];
    for w in &manifest.writers {
        match table.get_mut(w.class_index) {
            Some(slot @ None) => *slot = Some(w.bmi),
            Some(Some(_)) => return Err(Error::Manifest(format!("class index {} assigned twice", w.class_index))),
            None => return Err(Error::Manifest(format!("class index {} out of range", w.class_index))),
        }
    }
    Ok(table.into_iter().map(|b| b.expect("every slot filled")).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BmiPrediction {
    pub class: usize,
    pub bmi: f64,
    pub confidence: f64,
}

impl fmt::Display for BmiPrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.2},{:.6}", self.class, self.bmi, self.confidence)
    }
}

pub fn predict_bmi(probs: &[f64], table: &[f64]) -> Result<BmiPrediction> {
    if probs.len() != table.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} probabilities for a {}-class BMI table",
            probs.len(),
            table.len()
        )));
    }
    let class = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    Ok(BmiPrediction {
        class,
        bmi: table[class],
        confidence: probs[class],
    })
}
