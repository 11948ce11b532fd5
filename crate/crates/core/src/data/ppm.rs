//! Binary PPM (`P6`, maxval 255) images and class-per-directory trees.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

/// Decoded image: width, height, and interleaved RGB bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl PpmImage {
    /// Planar `(3, H, W)` values scaled to `[0, 1]`.
    pub fn planes(&self) -> Vec<f64> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c] as f64 / 255.0;
            }
        }
        out
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Skips whitespace and `#` comments running to the end of the line.
    fn skip_separators(&mut self) {
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

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail(format!("expected {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.fail(format!("{field} does not fit")))
    }
}

pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<PpmImage> {
    let mut h = Header { bytes, pos: 0, path };
    if !bytes.starts_with(b"P6") {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(h.fail(format!("magic `{magic}` is not P6")));
    }
    h.pos = 2;
    if !h.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(h.fail("missing separator after magic"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(h.fail(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(h.fail(format!("maxval {maxval} is not 255")));
    }
    // exactly one whitespace byte separates maxval from the raster
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(h.fail("missing whitespace before raster"));
    }
    h.pos += 1;
    let need = 3 * width * height;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(h.fail(format!("raster has {} bytes, expected {need}", raster.len())));
    }
    Ok(PpmImage {
        width,
        height,
        rgb: raster[..need].to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<PpmImage> {
    parse_ppm(&fs::read(path)?, path)
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let keep = if want_dirs {
            path.is_dir()
        } else {
            path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
        };
        if keep {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One subdirectory per class; class indices follow the sorted directory
/// names and files are read in sorted order. All images must share the
/// first image's dimensions.
pub fn read_ppm_directory(root: &Path) -> Result<Dataset> {
    let classes = sorted_entries(root, true)?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (class, dir) in classes.iter().enumerate() {
        for file in sorted_entries(dir, false)? {
            let img = read_ppm(&file)?;
            let got = (img.width, img.height);
            match dims {
                None => dims = Some(got),
                Some(expected) if expected != got => {
                    return Err(Error::DimensionMismatch {
                        path: file,
                        expected,
                        actual: got,
                    })
                }
                Some(_) => {}
            }
            pixels.extend(img.planes());
            labels.push(class);
        }
    }
    let (w, h) = dims.ok_or(Error::EmptyDataset)?;
    let images = Tensor::new(vec![labels.len(), 3, h, w], pixels)?;
    let labels = Dataset::one_hot(&labels, classes.len())?;
    Dataset::new(images, labels, Split::Full, format!("ppm:{}", root.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(bytes: &[u8]) -> Result<PpmImage> {
        parse_ppm(bytes, Path::new("mem.ppm"))
    }

    #[test]
    fn two_pixels() {
        let img = p(b"P6\n2 1\n255\n\xff\x00\x00\x00\xff\x00").unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.planes(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn comments_and_whitespace() {
        let plain = p(b"P6\n2 1\n255\n\xff\x00\x00\x00\xff\x00").unwrap();
        let commented = p(b"P6 # magic\n# whole line\n2\t# width\n 1\r\n#x\n255 \xff\x00\x00\x00\xff\x00").unwrap();
        assert_eq!(plain, commented);
    }

    #[test]
    fn raster_may_start_with_whitespace_bytes() {
        let img = p(b"P6 1 1 255\n\x0a\x20\x09").unwrap();
        assert_eq!(img.rgb, vec![0x0a, 0x20, 0x09]);
    }

    #[test]
    fn malformed() {
        for bad in [
            &b"P3\n1 1\n255\n0 0 0"[..],
            b"P6\n1\n255\n",
            b"P6\n1 1\n65535\n\0\0\0\0\0\0",
            b"P6\n1 1\n255\n\0\0",
            b"P6\n0 1\n255\n",
            b"P61 1 255\n\0\0\0",
        ] {
            assert!(matches!(p(bad), Err(Error::MalformedHeader { .. })), "{:?}", String::from_utf8_lossy(bad));
        }
    }
}
