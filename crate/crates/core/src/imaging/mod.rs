//! Raster images and the scan-to-tensor pipeline: decode, threshold, segment,
//! denoise, resize, normalize.

mod filter;
mod pnm;
mod segment;
mod threshold;

pub use filter::{median_denoise, resize_bilinear};
pub use pnm::{decode_pnm, encode_pnm, load_image, load_image_raw, save_image};
pub use segment::{segment_sheet, BoundingBox, CharCrop, Segmentation, MIN_GLYPH_SIZE};
pub use threshold::{grayscale, otsu_threshold, InkMask};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("image extents must be positive, got {width}x{height}")));
        }
        if !matches!(channels, 1 | 3) {
            return Err(Error::Channel(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Three-channel copy; graymaps are replicated into each channel.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&p| [p, p, p]).collect(),
        }
    }

    /// Single-channel luma copy.
    pub fn to_gray(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels: grayscale(self),
        }
    }

    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match channels {
            1 => Ok(self.to_gray()),
            3 => Ok(self.to_rgb()),
            c => Err(Error::Channel(format!("images have 1 or 3 channels, got {c}"))),
        }
    }

    /// Sub-image `[x, x+w) x [y, y+h)`; the box must lie inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::Shape(format!(
                "crop ({x},{y},{w},{h}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(w * h * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Image::new(w, h, c, pixels)
    }
}

/// `pixel / 255` in channel-planar `(C, H, W)` layout.
pub fn normalize(img: &Image) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut data = vec![0.0; c * h * w];
    for (i, px) in img.pixels.chunks(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + i] = v as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[c, h, w], data).expect("image extents are positive")
}

/// Inverse of [`normalize`], rounding to the nearest 8-bit level after clamping to [0,1].
pub fn denormalize(t: &Tensor) -> Result<Image> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("expected (C,H,W), got {:?}", t.shape()))),
    };
    let mut pixels = vec![0u8; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            let v = t.data()[ch * h * w + i].clamp(0.0, 1.0);
            pixels[i * c + ch] = (v * 255.0).round() as u8;
        }
    }
    Image::new(w, h, c, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_layout() {
        let img = Image::new(2, 1, 3, vec![255, 0, 128, 0, 255, 0]).unwrap();
        let t = normalize(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
        assert!((t.data()[4] - 128.0 / 255.0).abs() < 1e-15);
        assert!((128.0f64 / 255.0 - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn normalize_default_crop_shape() {
        let img = Image::filled(224, 224, 3, 7).unwrap();
        assert_eq!(normalize(&img).shape(), &[3, 224, 224]);
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let pixels: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 23 % 256) as u8).collect();
        let img = Image::new(4, 3, 3, pixels).unwrap();
        assert_eq!(denormalize(&normalize(&img)).unwrap(), img);
    }

    #[test]
    fn crop_bounds() {
        let img = Image::filled(10, 10, 1, 0).unwrap();
        assert!(img.crop(5, 5, 5, 5).is_ok());
        assert!(img.crop(6, 5, 5, 5).is_err());
    }

    #[test]
    fn rejects_bad_channel_count() {
        assert!(matches!(Image::new(1, 1, 2, vec![0, 0]), Err(Error::Channel(_))));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_range_and_shape(w in 1usize..12, h in 1usize..12, gray in any::<bool>(), seed in any::<u64>()) {
                let c = if gray { 1 } else { 3 };
                let pixels: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
                let t = normalize(&Image::new(w, h, c, pixels).unwrap());
                prop_assert_eq!(t.shape(), &[c, h, w]);
                prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
