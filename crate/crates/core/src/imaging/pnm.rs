//! Binary portable graymap (P5) and pixmap (P6) files, 8 bits per sample.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

/// Parses a P5/P6 byte buffer. `origin` names the source in error messages.
pub fn decode_pnm(bytes: &[u8], origin: &str) -> Result<Image> {
    let bad = |reason: &str| Error::format(origin, reason);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("not a binary P5/P6 file")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number().ok_or_else(|| bad("missing width"))?;
    let height = cur.number().ok_or_else(|| bad("missing height"))?;
    let maxval = cur.number().ok_or_else(|| bad("missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    if maxval != 255 {
        return Err(bad(&format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(bad("header not terminated by whitespace")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("image too large"))?;
    let body = &bytes[cur.pos..];
    if body.len() < need {
        return Err(bad(&format!("truncated pixel data: {} of {need} bytes", body.len())));
    }
    Image::new(width, height, channels, body[..need].to_vec())
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Reads a P5/P6 file, promoting graymaps to three channels.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_pnm(&bytes, &path.display().to_string())?.to_rgb())
}

/// Reads a P5/P6 file keeping its stored channel count.
pub fn load_image_raw(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, &path.display().to_string())
}

/// Writes P6 for three-channel images and P5 for one.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graymap_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        fs::write(&path, b"P5\n2 2\n255\n\xff\xff\xff\xff").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert!(img.pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn comments_in_header() {
        let img = decode_pnm(b"P6 # made by hand\n1 1\n# depth\n255\n\x01\x02\x03", "mem").unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3]);
    }

    #[test]
    fn truncated_and_malformed() {
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\x00\x00", "t"), Err(Error::Format { .. })));
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0 0 0", "t"), Err(Error::Format { .. })));
        assert!(matches!(decode_pnm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", "t"), Err(Error::Format { .. })));
        assert!(matches!(decode_pnm(b"P5\n", "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image(Path::new("/nonexistent/x.ppm")), Err(Error::Io { .. })));
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..5 * 3 * 3).map(|i| (i * 17 % 256) as u8).collect();
        let img = Image::new(5, 3, 3, pixels).unwrap();
        let path = dir.path().join("sub/r.ppm");
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }
}
