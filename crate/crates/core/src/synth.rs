//! Desk-scale stand-in for a scanned handwriting corpus.
//!
//! Each letter has a fixed stroke skeleton. Each writer bends it through a
//! personal slant, scale, stroke width, offset and ink colour, so writers are
//! separable from any single glyph.

use std::f64::consts::TAU;

use crate::dataset::{bmi, form_slot, WriterRecord, FORM_LETTERS, FORM_REPETITIONS};
use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, Image};
use crate::rng::RngStream;

pub const MIN_SYNTH_SIZE: usize = 16;
pub const SHEET_COLUMNS: usize = FORM_LETTERS / 2;
pub const SHEET_ROWS: usize = 2 * FORM_REPETITIONS;
const TEMPLATE_SEED: u64 = 0x5c41_7e11;

#[derive(Clone, Debug, PartialEq)]
pub struct WriterStyle {
    pub slant: f64,
    pub scale: f64,
    /// Stroke width in pixels at a 64-pixel canvas.
    pub thickness: f64,
    pub offset: [f64; 2],
    pub ink: [u8; 3],
    /// Pale wash of the ink hue: each writer fills a form on their own stock.
    pub paper: [u8; 3],
}

impl WriterStyle {
    /// Style of writer `index` out of `count`; ink hues are spread around the colour wheel.
    pub fn draw(index: usize, count: usize, stream: &mut RngStream) -> WriterStyle {
        let hue = TAU * (index as f64 + stream.uniform(-0.2, 0.2)) / count.max(1) as f64;
        let ink = [0, 1, 2].map(|c| (60.0 + 50.0 * (hue - TAU * c as f64 / 3.0).cos()).round() as u8);
        let tone = stream.uniform(218.0, 230.0);
        let paper = [0, 1, 2].map(|c| (tone + 25.0 * (hue - TAU * c as f64 / 3.0).cos()).round() as u8);
        WriterStyle {
            slant: stream.uniform(-0.4, 0.4),
            scale: stream.uniform(0.7, 0.9),
            thickness: stream.uniform(1.2, 3.0),
            offset: [stream.uniform(-0.05, 0.05), stream.uniform(-0.05, 0.05)],
            ink,
            paper,
        }
    }
}

/// Stroke skeleton of a lowercase letter: one open polyline in the unit square.
pub fn glyph_template(c: char) -> Vec<[f64; 2]> {
    let mut s = RngStream::new(TEMPLATE_SEED, "glyph", c as u64);
    let n = 4 + s.below(3);
    (0..n).map(|_| [s.uniform(0.1, 0.9), s.uniform(0.1, 0.9)]).collect()
}

fn styled_points(c: char, style: &WriterStyle, jitter: &mut RngStream) -> Vec<[f64; 2]> {
    let shift = [jitter.uniform(-0.02, 0.02), jitter.uniform(-0.02, 0.02)];
    glyph_template(c)
        .into_iter()
        .map(|[x, y]| {
            let (x, y) = (x - 0.5 + jitter.uniform(-0.03, 0.03), y - 0.5 + jitter.uniform(-0.03, 0.03));
            let x = x - style.slant * y;
            [
                0.5 + style.scale * x + style.offset[0] + shift[0],
                0.5 + style.scale * y + style.offset[1] + shift[1],
            ]
        })
        .collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Draws a pixel-space polyline; half-widths of at least 0.75 keep the stroke 8-connected.
fn stroke(canvas: &mut Image, pts: &[[f64; 2]], half_width: f64, ink: [u8; 3]) {
    let half = half_width.max(0.75);
    let (w, h) = (canvas.width(), canvas.height());
    let c = canvas.channels();
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = (a[0].min(b[0]) - half).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + half).ceil() as usize).min(w);
        let y0 = (a[1].min(b[1]) - half).floor().max(0.0) as usize;
        let y1 = ((a[1].max(b[1]) + half).ceil() as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b) <= half {
                    for ch in 0..c {
                        canvas.set(x, y, ch, ink[ch.min(2)]);
                    }
                }
            }
        }
    }
}

fn blank(w: usize, h: usize, paper: [u8; 3]) -> Result<Image> {
    Image::new(w, h, 3, paper.repeat(w * h))
}

/// One RGB glyph image of `size` x `size`.
pub fn render_glyph(c: char, style: &WriterStyle, size: usize, jitter: &mut RngStream) -> Result<Image> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::Parameter(format!("glyph size must be at least {MIN_SYNTH_SIZE}, got {size}")));
    }
    let mut img = blank(size, size, style.paper)?;
    let pts: Vec<[f64; 2]> = styled_points(c, style, jitter)
        .into_iter()
        .map(|[x, y]| [x * size as f64, y * size as f64])
        .collect();
    stroke(&mut img, &pts, style.thickness * size as f64 / 128.0, style.ink);
    Ok(img)
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub writer_id: u32,
    pub char_label: char,
    pub repetition: u32,
    pub image: Image,
}

impl SynthImage {
    /// `<writer>/<char>_<rep>.ppm`
    pub fn relative_path(&self) -> String {
        format!("{:02}/{}_{}.ppm", self.writer_id, self.char_label, self.repetition)
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub writers: Vec<WriterRecord>,
    pub styles: Vec<WriterStyle>,
    pub images: Vec<SynthImage>,
}

fn fabricate_writer(id: u32, stream: &mut RngStream) -> Result<WriterRecord> {
    let height_m = (stream.uniform(1.50, 1.90) * 100.0).round() / 100.0;
    let target = stream.uniform(17.0, 32.0);
    let weight_kg = (target * height_m * height_m * 10.0).round() / 10.0;
    let bmi = (bmi(height_m, weight_kg)? * 100.0).round() / 100.0;
    Ok(WriterRecord {
        writer_id: id,
        height_m,
        weight_kg,
        bmi,
        class_index: id as usize,
    })
}

pub fn synth_dataset(
    n_writers: usize,
    chars_per_writer: usize,
    image_size: usize,
    stream: &RngStream,
) -> Result<SynthCorpus> {
    if n_writers < 2 {
        return Err(Error::Parameter(format!("need at least 2 writers, got {n_writers}")));
    }
    if image_size < MIN_SYNTH_SIZE {
        return Err(Error::Parameter(format!(
            "image size must be at least {MIN_SYNTH_SIZE}, got {image_size}"
        )));
    }
    let mut writers = Vec::with_capacity(n_writers);
    let mut styles = Vec::with_capacity(n_writers);
    let mut images = Vec::with_capacity(n_writers * chars_per_writer);
    for w in 0..n_writers {
        let mut ws = stream.derive("writer", w as u64);
        writers.push(fabricate_writer(w as u32, &mut ws)?);
        let style = WriterStyle::draw(w, n_writers, &mut ws);
        for i in 0..chars_per_writer {
            let (char_label, repetition) = form_slot(i);
            let mut js = stream.derive("writer", w as u64).derive("glyph", i as u64);
            images.push(SynthImage {
                writer_id: w as u32,
                char_label,
                repetition,
                image: render_glyph(char_label, &style, image_size, &mut js)?,
            });
        }
        styles.push(style);
    }
    Ok(SynthCorpus { writers, styles, images })
}

/// A scanned form: 26 letters x 3 repetitions on a 13 x 6 grid of `cell`-pixel boxes,
/// sprinkled with dust specks. Returns the sheet and the expected ink box of each glyph
/// in reading order.
pub fn synth_sheet(style: &WriterStyle, cell: usize, stream: &RngStream) -> Result<(Image, Vec<BoundingBox>)> {
    if cell < 24 {
        return Err(Error::Parameter(format!("sheet cells must be at least 24 px, got {cell}")));
    }
    let margin = cell / 2;
    let (w, h) = (SHEET_COLUMNS * cell + 2 * margin, SHEET_ROWS * cell + 2 * margin);
    let mut sheet = blank(w, h, style.paper)?;
    let mut boxes = Vec::with_capacity(SHEET_COLUMNS * SHEET_ROWS);
    let glyph_half = style.thickness * cell as f64 / 128.0;
    for i in 0..SHEET_COLUMNS * SHEET_ROWS {
        let (c, _) = form_slot(i);
        let (row, col) = (i / SHEET_COLUMNS, i % SHEET_COLUMNS);
        let mut js = stream.derive("sheet-glyph", i as u64);
        let pts = styled_points(c, style, &mut js);
        // Centre the skeleton in its cell so a row shares one baseline band.
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in &pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let fit = 0.6 * cell as f64 / span;
        let origin = [
            (margin + col * cell) as f64 + cell as f64 / 2.0,
            (margin + row * cell) as f64 + cell as f64 / 2.0,
        ];
        let placed: Vec<[f64; 2]> = pts
            .iter()
            .map(|p| {
                [
                    origin[0] + (p[0] - (lo[0] + hi[0]) / 2.0) * fit,
                    origin[1] + (p[1] - (lo[1] + hi[1]) / 2.0) * fit,
                ]
            })
            .collect();
        let before = sheet.clone();
        stroke(&mut sheet, &placed, glyph_half, style.ink);
        boxes.push(changed_box(&before, &sheet).expect("every glyph leaves ink"));
    }
    let mut dust = stream.derive("dust", 0);
    for _ in 0..40 {
        let (x, y) = (dust.below(w - 2), dust.below(h - 2));
        let clear = (0..3).all(|dy| (0..3).all(|dx| (0..3).all(|ch| sheet.get(x + dx, y + dy, ch) == style.paper[ch])));
        if clear && !near_any(&boxes, x, y, 3) {
            for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
                for ch in 0..3 {
                    sheet.set(x + dx, y + dy, ch, style.ink[ch]);
                }
            }
        }
    }
    Ok((sheet, boxes))
}

fn near_any(boxes: &[BoundingBox], x: usize, y: usize, gap: usize) -> bool {
    boxes.iter().any(|b| {
        x + gap + 2 >= b.x && x <= b.x + b.w + gap && y + gap + 2 >= b.y && y <= b.y + b.h + gap
    })
}

fn changed_box(before: &Image, after: &Image) -> Option<BoundingBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..after.height() {
        for x in 0..after.width() {
            if (0..after.channels()).any(|c| before.get(x, y, c) != after.get(x, y, c)) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| BoundingBox {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}
