use super::Image;

/// Luma `(299 R + 587 G + 114 B) / 1000`, rounded; single-channel input passes through.
pub fn grayscale(img: &Image) -> Vec<u8> {
    if img.channels() == 1 {
        return img.pixels().to_vec();
    }
    img.pixels()
        .chunks(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect()
}

/// Binary ink mask. `threshold` is the brightest level counted as ink, `None`
/// when the image has a single level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InkMask {
    pub width: usize,
    pub height: usize,
    pub threshold: Option<u8>,
    pub ink: Vec<bool>,
}

impl InkMask {
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&b| b).count()
    }
}

/// Global Otsu threshold on the grayscale histogram.
///
/// Levels `<= t` form the ink class, where `t` maximizes the between-class
/// variance (first `t` on ties). A single-level image yields an empty mask.
pub fn otsu_threshold(img: &Image) -> InkMask {
    let gray = grayscale(img);
    let mut hist = [0u64; 256];
    for &g in &gray {
        hist[g as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let mut best: Option<(u8, f64)> = None;
    let (mut w0, mut sum0) = (0.0, 0.0);
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    let threshold = best.map(|(t, _)| t);
    let ink = match threshold {
        Some(t) => gray.iter().map(|&g| g <= t).collect(),
        None => vec![false; gray.len()],
    };
    InkMask {
        width: img.width(),
        height: img.height(),
        threshold,
        ink,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: between-class variance of every cut, computed directly.
    fn brute_force_best_cut(levels: &[u8]) -> Option<u8> {
        let mut best: Option<(u8, f64)> = None;
        for t in 0u16..255 {
            let (dark, light): (Vec<f64>, Vec<f64>) = {
                let d: Vec<f64> = levels.iter().filter(|&&v| v as u16 <= t).map(|&v| v as f64).collect();
                let l: Vec<f64> = levels.iter().filter(|&&v| v as u16 > t).map(|&v| v as f64).collect();
                (d, l)
            };
            if dark.is_empty() || light.is_empty() {
                continue;
            }
            let n = levels.len() as f64;
            let (p0, p1) = (dark.len() as f64 / n, light.len() as f64 / n);
            let m0 = dark.iter().sum::<f64>() / dark.len() as f64;
            let m1 = light.iter().sum::<f64>() / light.len() as f64;
            let var = p0 * p1 * (m0 - m1).powi(2);
            if best.is_none_or(|(_, b)| var > b * (1.0 + 1e-12)) {
                best = Some((t as u8, var));
            }
        }
        best.map(|(t, _)| t)
    }

    fn bimodal(dark: u8, light: u8) -> Image {
        let px: Vec<u8> = (0..64).map(|i| if (i * 7) % 5 < 2 { dark } else { light }).collect();
        Image::new(8, 8, 1, px).unwrap()
    }

    #[test]
    fn bimodal_marks_exactly_the_dark_pixels() {
        let img = bimodal(10, 240);
        let mask = otsu_threshold(&img);
        let oracle = brute_force_best_cut(img.pixels()).unwrap();
        let t = mask.threshold.unwrap();
        assert!((10..240).contains(&t));
        assert!((10..240).contains(&oracle));
        for (i, &p) in img.pixels().iter().enumerate() {
            assert_eq!(mask.ink[i], p == 10);
        }
    }

    #[test]
    fn matches_brute_force_on_spread_histogram() {
        let px: Vec<u8> = (0..400u32).map(|i| ((i * i * 31 + i * 7) % 256) as u8).collect();
        let img = Image::new(20, 20, 1, px).unwrap();
        let t = otsu_threshold(&img).threshold.unwrap();
        assert_eq!(Some(t), brute_force_best_cut(img.pixels()));
    }

    #[test]
    fn constant_image_has_no_ink() {
        let mask = otsu_threshold(&Image::filled(9, 9, 3, 77).unwrap());
        assert_eq!(mask.threshold, None);
        assert_eq!(mask.ink_count(), 0);
    }

    #[test]
    fn inversion_swaps_roles() {
        let img = bimodal(30, 200);
        let inv = Image::new(8, 8, 1, img.pixels().iter().map(|&p| 255 - p).collect()).unwrap();
        let a = otsu_threshold(&img);
        let b = otsu_threshold(&inv);
        for i in 0..64 {
            assert_eq!(a.ink[i], !b.ink[i]);
        }
    }

    #[test]
    fn two_level_images_always_separate() {
        for lo in 0u8..=253 {
            for hi in (lo as u16 + 2..=255).step_by(7).map(|v| v as u8) {
                let mask = otsu_threshold(&bimodal(lo, hi));
                let img = bimodal(lo, hi);
                for (i, &p) in img.pixels().iter().enumerate() {
                    assert_eq!(mask.ink[i], p == lo, "levels {lo},{hi}");
                }
            }
        }
    }
}
