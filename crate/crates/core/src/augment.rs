//! Photometric augmentations on normalized `(C, H, W)` images in [0, 1].
//!
//! Every transform clamps its output to [0, 1]. Random transforms draw from a
//! stream derived from the master seed and the image index, so results do not
//! depend on processing order or worker count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Each original yields itself plus six variants.
pub const AUGMENT_MULTIPLICITY: usize = 7;

/// File-name suffixes of the six variants, in [`augment_all`] output order after the original.
pub const VARIANT_SUFFIXES: [&str; 6] = ["_blur", "_noise", "_jitter", "_bright", "_contrast", "_sharp"];

const SHARPEN_SIGMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub brightness_factor: f64,
    pub contrast_factor: f64,
    pub sharpness_amount: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub blur_ksize: usize,
    pub jitter_scale_range: [f64; 2],
    pub jitter_shift_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            brightness_factor: 1.25,
            contrast_factor: 1.25,
            sharpness_amount: 1.0,
            noise_sigma: 0.05,
            blur_sigma: 1.0,
            blur_ksize: 5,
            jitter_scale_range: [0.9, 1.1],
            jitter_shift_range: [-0.05, 0.05],
            seed: crate::train::DEFAULT_SEED,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.brightness_factor > 0.0) {
            problems.push(format!("brightness_factor must be > 0, got {}", self.brightness_factor));
        }
        if !(self.contrast_factor > 0.0) {
            problems.push(format!("contrast_factor must be > 0, got {}", self.contrast_factor));
        }
        for (name, v) in [
            ("sharpness_amount", self.sharpness_amount),
            ("noise_sigma", self.noise_sigma),
            ("blur_sigma", self.blur_sigma),
        ] {
            if !(v >= 0.0) {
                problems.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.blur_ksize.is_multiple_of(2) {
            problems.push(format!("blur_ksize must be odd, got {}", self.blur_ksize));
        }
        for (name, [lo, hi]) in [
            ("jitter_scale_range", self.jitter_scale_range),
            ("jitter_shift_range", self.jitter_shift_range),
        ] {
            if !(lo <= hi) {
                problems.push(format!("{name} must be ordered, got [{lo}, {hi}]"));
            }
        }
        if self.jitter_scale_range[0] <= 0.0 {
            problems.push("jitter_scale_range must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

fn chw(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected a (C,H,W) image, got {:?}", img.shape()))),
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn brightness(img: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor > 0.0) {
        return Err(Error::Range(format!("brightness factor must be > 0, got {factor}")));
    }
    Ok(img.map(|v| clamp01(factor * v)))
}

/// Mean of the luma plane (the only plane for single-channel images).
pub fn gray_mean(img: &Tensor) -> Result<f64> {
    let (c, h, w) = chw(img)?;
    let plane = h * w;
    let d = img.data();
    let sum: f64 = match c {
        3 => (0..plane).map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i]).sum(),
        _ => d.iter().sum::<f64>() / c as f64,
    };
    Ok(sum / plane as f64)
}

pub fn contrast(img: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor > 0.0) {
        return Err(Error::Range(format!("contrast factor must be > 0, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let mean = gray_mean(img)?;
    Ok(img.map(|v| clamp01(mean + factor * (v - mean))))
}

/// Normalized discrete Gaussian of odd length `ksize`; `sigma == 0` is a unit impulse.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if ksize.is_multiple_of(2) {
        return Err(Error::Parameter(format!("blur kernel size must be odd, got {ksize}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Range(format!("blur sigma must be >= 0, got {sigma}")));
    }
    let r = (ksize / 2) as isize;
    if sigma == 0.0 {
        return Ok((-r..=r).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect());
    }
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Separable blur, borders replicated.
pub fn gaussian_blur(img: &Tensor, sigma: f64, ksize: usize) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    let k = gaussian_kernel(sigma, ksize)?;
    let r = (ksize / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kj) in k.iter().enumerate() {
                    let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kj * src[base + y * w + sx];
                }
                tmp[base + y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kj) in k.iter().enumerate() {
                    let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kj * tmp[base + sy * w + x];
                }
                out[base + y * w + x] = clamp01(acc);
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// Unsharp mask with a fixed blur sigma of 1.
pub fn sharpen(img: &Tensor, amount: f64) -> Result<Tensor> {
    if !(amount >= 0.0) {
        return Err(Error::Range(format!("sharpness amount must be >= 0, got {amount}")));
    }
    if amount == 0.0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, SHARPEN_SIGMA, 5)?;
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&v, &b)| clamp01(v + amount * (v - b)))
        .collect();
    Tensor::from_vec(img.shape(), data)
}

pub fn gaussian_noise(img: &Tensor, sigma: f64, stream: &mut RngStream) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Range(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let data = img.data().iter().map(|&v| clamp01(v + sigma * stream.standard_normal())).collect();
    Tensor::from_vec(img.shape(), data)
}

/// Per-channel affine colour change drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterDraw {
    pub scale: [f64; 3],
    pub shift: [f64; 3],
}

pub fn draw_jitter(spec: &AugmentSpec, stream: &mut RngStream) -> JitterDraw {
    let [s0, s1] = spec.jitter_scale_range;
    let [t0, t1] = spec.jitter_shift_range;
    let mut d = JitterDraw {
        scale: [0.0; 3],
        shift: [0.0; 3],
    };
    for c in 0..3 {
        d.scale[c] = stream.uniform(s0, s1);
        d.shift[c] = stream.uniform(t0, t1);
    }
    d
}

pub fn apply_jitter(img: &Tensor, draw: &JitterDraw) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    if c != 3 {
        return Err(Error::Channel(format!("colour jitter needs 3 channels, got {c}")));
    }
    let mut out = img.clone();
    for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        for v in plane {
            *v = clamp01(draw.scale[ch] * *v + draw.shift[ch]);
        }
    }
    Ok(out)
}

pub fn color_jitter(img: &Tensor, spec: &AugmentSpec, stream: &mut RngStream) -> Result<Tensor> {
    let (c, _, _) = chw(img)?;
    if c != 3 {
        return Err(Error::Channel(format!("colour jitter needs 3 channels, got {c}")));
    }
    apply_jitter(img, &draw_jitter(spec, stream))
}

/// `[original, blur, noise, jitter, brightness, contrast, sharpness]` for image `index`.
pub fn augment_all(img: &Tensor, spec: &AugmentSpec, index: u64) -> Result<Vec<Tensor>> {
    spec.validate()?;
    let base = RngStream::new(spec.seed, "augment", index);
    Ok(vec![
        img.clone(),
        gaussian_blur(img, spec.blur_sigma, spec.blur_ksize)?,
        gaussian_noise(img, spec.noise_sigma, &mut base.derive("noise", 0))?,
        color_jitter(img, spec, &mut base.derive("jitter", 0))?,
        brightness(img, spec.brightness_factor)?,
        contrast(img, spec.contrast_factor)?,
        sharpen(img, spec.sharpness_amount)?,
    ])
}

/// Fails unless exactly seven outputs exist per original.
pub fn check_augmented_count(originals: usize, outputs: usize) -> Result<()> {
    if outputs != AUGMENT_MULTIPLICITY * originals {
        return Err(Error::Data(format!(
            "augmentation produced {outputs} images from {originals} originals, expected {}",
            AUGMENT_MULTIPLICITY * originals
        )));
    }
    Ok(())
}
