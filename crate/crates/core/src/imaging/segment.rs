use std::path::{Path, PathBuf};

use super::{otsu_threshold, Image, InkMask};
use crate::error::{Error, Result};

/// Smallest crop edge; shorter boxes are grown symmetrically.
pub const MIN_GLYPH_SIZE: usize = 8;
const MIN_SHEET_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharCrop {
    pub image: Image,
    pub source_sheet: PathBuf,
    pub bounding_box: BoundingBox,
    pub sequence_index: usize,
    /// Label of the connected component the crop was cut around.
    pub component_id: usize,
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub crops: Vec<CharCrop>,
    /// Component count before the area filter.
    pub components: usize,
    pub discarded: usize,
    pub threshold: Option<u8>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct Component {
    id: usize,
    area: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Component {
    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    fn center_y2(&self) -> usize {
        self.y0 + self.y1
    }
}

/// 8-connected components of the ink mask, labelled in raster-scan order of first pixel.
fn components(mask: &InkMask) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.ink[start] || seen[start] {
            continue;
        }
        let mut comp = Component {
            id: out.len(),
            area: 0,
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.area += 1;
            comp.x0 = comp.x0.min(x);
            comp.y0 = comp.y0.min(y);
            comp.x1 = comp.x1.max(x);
            comp.y1 = comp.y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.ink[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Expands `[lo, hi)` to at least `min` wide, staying within `[0, limit)`.
fn grow(lo: usize, hi: usize, min: usize, limit: usize) -> (usize, usize) {
    let min = min.min(limit);
    if hi - lo >= min {
        return (lo, hi);
    }
    let missing = min - (hi - lo);
    let lo = lo.saturating_sub(missing / 2);
    let hi = (lo + min).min(limit);
    (hi - min, hi)
}

/// Row-major order: bands whose height is the median component height, then left to right.
fn reading_order(mut comps: Vec<Component>) -> Vec<Component> {
    if comps.is_empty() {
        return comps;
    }
    let mut heights: Vec<usize> = comps.iter().map(Component::height).collect();
    heights.sort_unstable();
    let band = heights[(heights.len() - 1) / 2].max(1);
    comps.sort_by_key(|c| (c.center_y2(), c.x0));
    let mut ordered = Vec::with_capacity(comps.len());
    let mut current: Vec<Component> = Vec::new();
    let mut band_top = comps[0].center_y2();
    for c in comps {
        // Centres are kept doubled to stay in integers.
        if c.center_y2() >= band_top + 2 * band {
            current.sort_by_key(|c| (c.x0, c.y0));
            ordered.append(&mut current);
            band_top = c.center_y2();
        }
        current.push(c);
    }
    current.sort_by_key(|c| (c.x0, c.y0));
    ordered.append(&mut current);
    ordered
}

/// Cuts one crop per ink component of at least `min_area` pixels.
pub fn segment_sheet(sheet: &Image, source: &Path, min_area: usize, pad: usize) -> Result<Segmentation> {
    if sheet.width() < MIN_SHEET_SIZE || sheet.height() < MIN_SHEET_SIZE {
        return Err(Error::Input(format!(
            "sheet {} is {}x{}, segmentation needs at least {MIN_SHEET_SIZE}x{MIN_SHEET_SIZE}",
            source.display(),
            sheet.width(),
            sheet.height()
        )));
    }
    let mask = otsu_threshold(sheet);
    let all = components(&mask);
    let total = all.len();
    let kept: Vec<Component> = all.into_iter().filter(|c| c.area >= min_area).collect();
    let discarded = total - kept.len();
    let mut warnings = Vec::new();
    if kept.is_empty() {
        warnings.push(format!("no character components found on {}", source.display()));
    }
    let mut crops = Vec::with_capacity(kept.len());
    for (seq, c) in reading_order(kept).into_iter().enumerate() {
        let (x0, x1) = grow(
            c.x0.saturating_sub(pad),
            (c.x1 + 1 + pad).min(sheet.width()),
            MIN_GLYPH_SIZE,
            sheet.width(),
        );
        let (y0, y1) = grow(
            c.y0.saturating_sub(pad),
            (c.y1 + 1 + pad).min(sheet.height()),
            MIN_GLYPH_SIZE,
            sheet.height(),
        );
        let bounding_box = BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        };
        crops.push(CharCrop {
            image: sheet.crop(x0, y0, x1 - x0, y1 - y0)?,
            source_sheet: source.to_path_buf(),
            bounding_box,
            sequence_index: seq,
            component_id: c.id,
        });
    }
    Ok(Segmentation {
        crops,
        components: total,
        discarded,
        threshold: mask.threshold,
        warnings,
    })
}
