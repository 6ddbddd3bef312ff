//! Grayscale and RGB rasters plus portable-anymap (P5/P6) I/O.
//!
//! Pixel `(x, y)` has its center at continuous coordinate `(x, y)`; bilinear
//! sampling therefore reproduces stored values exactly at integer positions.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ValueDomain {
    /// Display intensities in `[0, 255]`.
    Raw,
    /// Mean-subtracted unit-scaled values in `[-1, 1]`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    domain: ValueDomain,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, domain: ValueDomain) -> Self {
        Self::filled(width, height, 0.0, domain)
    }

    pub fn filled(width: usize, height: usize, value: f64, domain: ValueDomain) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            domain,
        }
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        domain: ValueDomain,
    ) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            domain,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample at a continuous position; 0 outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        if !(x >= 0.0 && y >= 0.0) {
            return 0.0;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return 0.0;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize with corner pixels aligned.
    pub fn resize(&self, out_w: usize, out_h: usize) -> Self {
        let sx = if out_w > 1 {
            (self.width - 1) as f64 / (out_w - 1) as f64
        } else {
            0.0
        };
        let sy = if out_h > 1 {
            (self.height - 1) as f64 / (out_h - 1) as f64
        } else {
            0.0
        };
        let mut out = GrayImage::new(out_w, out_h, self.domain);
        for v in 0..out_h {
            for u in 0..out_w {
                out.set(u, v, self.sample_bilinear(u as f64 * sx, v as f64 * sy));
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }

    /// Raw intensities rounded and clamped to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| p.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_pixels(
            width,
            height,
            bytes.iter().map(|&b| b as f64).collect(),
            ValueDomain::Raw,
        )
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn decode_pgm(data: &[u8]) -> std::result::Result<Self, String> {
        let (magic, w, h, maxval, body) = parse_pnm_header(data)?;
        if magic != "P5" {
            return Err(format!("expected P5, found {magic}"));
        }
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        if body.len() < w * h {
            return Err(format!("truncated raster: {} of {} bytes", body.len(), w * h));
        }
        Self::from_bytes(w, h, &body[..w * h]).map_err(|e| e.to_string())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_pgm())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&data).map_err(|reason| Error::format(path, reason))
    }
}

/// Tri-channel 8-bit raster used for overlays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn from_gray(img: &GrayImage) -> Self {
        let data = img.to_bytes().into_iter().map(|b| [b, b, b]).collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.data {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_ppm())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

type PnmHeader<'a> = (String, usize, usize, usize, &'a [u8]);

fn parse_pnm_header(data: &[u8]) -> std::result::Result<PnmHeader<'_>, String> {
    let mut tokens = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    i += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header number `{s}`"));
    let w = num(&tokens[1])?;
    let h = num(&tokens[2])?;
    let maxval = num(&tokens[3])?;
    Ok((tokens[0].clone(), w, h, maxval, data.get(i..).unwrap_or(&[])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let px: Vec<f64> = (0..12).map(|v| (v * 20) as f64).collect();
        let img = GrayImage::from_pixels(4, 3, px, ValueDomain::Raw).unwrap();
        let back = GrayImage::decode_pgm(&img.encode_pgm()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend([7u8, 9]);
        let img = GrayImage::decode_pgm(&data).unwrap();
        assert_eq!(img.pixels(), &[7.0, 9.0]);
    }

    #[test]
    fn bilinear_exact_at_pixel_centers_and_zero_outside() {
        let img = GrayImage::from_pixels(2, 2, vec![0.0, 10.0, 20.0, 30.0], ValueDomain::Raw)
            .unwrap();
        assert_eq!(img.sample_bilinear(1.0, 1.0), 30.0);
        assert_eq!(img.sample_bilinear(0.5, 0.5), 15.0);
        assert_eq!(img.sample_bilinear(-0.1, 0.5), 0.0);
        assert_eq!(img.sample_bilinear(1.01, 0.5), 0.0);
    }

    #[test]
    fn wrong_pixel_count_is_shape_error() {
        assert!(matches!(
            GrayImage::from_pixels(3, 3, vec![0.0; 8], ValueDomain::Raw),
            Err(Error::Shape(_))
        ));
    }
}
