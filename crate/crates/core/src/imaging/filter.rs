use super::Image;
use crate::error::{Error, Result};

/// Per-channel 3x3 median with the window clamped at the borders.
pub fn median_denoise(img: &Image) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut k = 0;
                for dy in [-1isize, 0, 1] {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in [-1isize, 0, 1] {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window[k] = img.get(sx, sy, ch);
                        k += 1;
                    }
                }
                window.sort_unstable();
                out.set(x, y, ch, window[4]);
            }
        }
    }
    out
}

/// Source coordinate and blend weight for each output index, half-pixel centred.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter(format!("resize target must be positive, got {out_h}x{out_w}")));
    }
    if (out_h, out_w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let c = img.channels();
    let xs = taps(img.width(), out_w);
    let ys = taps(img.height(), out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(x0, y0, ch) as f64 * (1.0 - fx) + img.get(x1, y0, ch) as f64 * fx;
                let bot = img.get(x0, y1, ch) as f64 * (1.0 - fx) + img.get(x1, y1, ch) as f64 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(out_w, out_h, c, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, px: Vec<u8>) -> Image {
        Image::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn constant_unchanged_by_median() {
        let img = Image::filled(7, 5, 3, 42).unwrap();
        assert_eq!(median_denoise(&img), img);
    }

    #[test]
    fn salt_pixel_removed_and_idempotent() {
        let mut px = vec![0u8; 25];
        px[12] = 255;
        let img = gray(5, 5, px);
        let once = median_denoise(&img);
        assert!(once.pixels().iter().all(|&p| p == 0));
        assert_eq!(median_denoise(&once), once);
    }

    #[test]
    fn corner_salt_uses_clamped_window() {
        // Clamping replicates the corner four times, so it is 4 of 9: still removed.
        let mut px = vec![0u8; 16];
        px[0] = 255;
        assert!(median_denoise(&gray(4, 4, px)).pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = gray(3, 2, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(resize_bilinear(&img, 2, 3).unwrap(), img);
    }

    #[test]
    fn constant_resizes_to_constant() {
        let img = Image::filled(5, 3, 3, 200).unwrap();
        for (h, w) in [(1, 1), (7, 11), (224, 224)] {
            let out = resize_bilinear(&img, h, w).unwrap();
            assert!(out.pixels().iter().all(|&p| p == 200));
        }
    }

    #[test]
    fn two_column_ramp_widened() {
        // Half-pixel centres at 0.25, 0.75 source widths map to s = -0.25, 0.25, 0.75, 1.25.
        let img = gray(2, 2, vec![0, 255, 0, 255]);
        let out = resize_bilinear(&img, 2, 4).unwrap();
        let expect = [0u8, 64, 191, 255];
        for y in 0..2 {
            let row: Vec<u8> = (0..4).map(|x| out.get(x, y, 0)).collect();
            assert_eq!(row, expect);
            assert!(row.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize_bilinear(&gray(1, 1, vec![0]), 0, 3).is_err());
    }

    proptest! {
        #[test]
        fn median_output_comes_from_window(
            w in 1usize..9, h in 1usize..9, seed in any::<u64>()
        ) {
            let px: Vec<u8> = (0..w * h).map(|i| (seed.rotate_left(i as u32 % 64) ^ (i as u64 * 2654435761)) as u8).collect();
            let img = gray(w, h, px);
            let out = median_denoise(&img);
            for y in 0..h {
                for x in 0..w {
                    let v = out.get(x, y, 0);
                    let mut found = false;
                    for sy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        for sx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                            found |= img.get(sx, sy, 0) == v;
                        }
                    }
                    prop_assert!(found);
                }
            }
        }

        #[test]
        fn resize_stays_within_input_range(
            w in 1usize..8, h in 1usize..8, ow in 1usize..20, oh in 1usize..20, seed in any::<u64>()
        ) {
            let px: Vec<u8> = (0..w * h).map(|i| (seed >> (i % 56)) as u8).collect();
            let img = gray(w, h, px);
            let (lo, hi) = (*img.pixels().iter().min().unwrap(), *img.pixels().iter().max().unwrap());
            let out = resize_bilinear(&img, oh, ow).unwrap();
            prop_assert!(out.pixels().iter().all(|&p| p >= lo && p <= hi));
        }
    }
}
