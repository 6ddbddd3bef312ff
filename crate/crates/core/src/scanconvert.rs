//! Display-trapezoid recovery and polar-to-Cartesian resampling.
//!
//! Angles are measured from the downward vertical through the apex, increasing
//! toward display +x, so a point at polar `(r, theta)` sits at
//! `(apex_x + r sin theta, apex_y + r cos theta)` in raster coordinates.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, ValueDomain};

/// Intensity above which a display pixel counts as sector support.
pub const SUPPORT_THRESHOLD: f64 = 8.0;
/// Minimum fraction of the raster the sector component must cover.
pub const MIN_REGION_FRACTION: f64 = 0.05;
/// Inward margin applied before resampling so every bilinear tap lands on content.
pub const DEFAULT_SAMPLING_MARGIN: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SectorGeometry {
    pub apex_x: f64,
    pub apex_y: f64,
    pub theta_start: f64,
    pub theta_end: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl SectorGeometry {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.apex_x,
            self.apex_y,
            self.theta_start,
            self.theta_end,
            self.r_min,
            self.r_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Geometry("non-finite geometry".into()));
        }
        if !(self.theta_start < self.theta_end) {
            return Err(Error::Geometry(format!(
                "theta_start {} must be below theta_end {}",
                self.theta_start, self.theta_end
            )));
        }
        if self.theta_end - self.theta_start >= std::f64::consts::PI
            || self.theta_start.abs() >= std::f64::consts::PI
            || self.theta_end.abs() >= std::f64::consts::PI
        {
            return Err(Error::Geometry("angular span must stay below pi".into()));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err(Error::Geometry(format!(
                "radii must satisfy 0 <= r_min ({}) < r_max ({})",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    pub fn point_at(&self, r: f64, theta: f64) -> (f64, f64) {
        (
            self.apex_x + r * theta.sin(),
            self.apex_y + r * theta.cos(),
        )
    }

    /// Polar coordinates `(r, theta)` of a raster point.
    pub fn polar_of(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.apex_x;
        let dy = y - self.apex_y;
        (dx.hypot(dy), dx.atan2(dy))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (r, t) = self.polar_of(x, y);
        r >= self.r_min && r <= self.r_max && t >= self.theta_start && t <= self.theta_end
    }

    /// Strictly interior test used for annotation placement.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        let (r, t) = self.polar_of(x, y);
        r > self.r_min && r < self.r_max && t > self.theta_start && t < self.theta_end
    }

    /// The four trapezoid corners: (r_min, start), (r_min, end), (r_max, start), (r_max, end).
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            self.point_at(self.r_min, self.theta_start),
            self.point_at(self.r_min, self.theta_end),
            self.point_at(self.r_max, self.theta_start),
            self.point_at(self.r_max, self.theta_end),
        ]
    }

    /// Analytic annulus-sector area.
    pub fn area(&self) -> f64 {
        0.5 * (self.theta_end - self.theta_start) * (self.r_max.powi(2) - self.r_min.powi(2))
    }

    pub fn fits_raster(&self, width: usize, height: usize) -> bool {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let inside = |(x, y): (f64, f64)| x >= 0.0 && y >= 0.0 && x <= w && y <= h;
        if !inside((self.apex_x, self.apex_y)) || !self.corners().iter().all(|&c| inside(c)) {
            return false;
        }
        // The outer arc bulges below the corners; its lowest point is at theta = 0
        // when 0 lies in the span, and its lateral extremes at +-pi/2.
        let mut probes = vec![];
        for t in [0.0, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2] {
            if t > self.theta_start && t < self.theta_end {
                probes.push(self.point_at(self.r_max, t));
            }
        }
        probes.into_iter().all(inside)
    }

    /// Shrinks the sector so that every point of the result is at least `margin`
    /// pixels from the original boundary.
    pub fn inset(&self, margin: f64) -> Result<Self> {
        let r_min = self.r_min + margin;
        let r_max = self.r_max - margin;
        if r_max <= r_min {
            return Err(Error::Geometry(format!("inset {margin} empties the radial span")));
        }
        let delta = (margin / r_min.max(margin)).min(1.0).asin();
        let out = Self {
            theta_start: self.theta_start + delta,
            theta_end: self.theta_end - delta,
            r_min,
            r_max,
            ..*self
        };
        out.validate()?;
        Ok(out)
    }

    /// Plain-text `key=value` sidecar.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "apex_x={}", self.apex_x);
        let _ = writeln!(s, "apex_y={}", self.apex_y);
        let _ = writeln!(s, "theta_start_deg={}", self.theta_start.to_degrees());
        let _ = writeln!(s, "theta_end_deg={}", self.theta_end.to_degrees());
        let _ = writeln!(s, "r_min_px={}", self.r_min);
        let _ = writeln!(s, "r_max_px={}", self.r_max);
        s
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 6] = [None; 6];
        const KEYS: [&str; 6] = [
            "apex_x",
            "apex_y",
            "theta_start_deg",
            "theta_end_deg",
            "r_min_px",
            "r_max_px",
        ];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: n + 1,
                field: "key=value",
                reason: format!("missing '=' in `{line}`"),
            })?;
            let slot = KEYS.iter().position(|k| *k == key.trim()).ok_or(Error::Parse {
                line: n + 1,
                field: "key",
                reason: format!("unknown key `{}`", key.trim()),
            })?;
            let v = value.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: n + 1,
                field: KEYS[slot],
                reason: format!("not a number: `{}`", value.trim()),
            })?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| {
            vals[i].ok_or(Error::Parse {
                line: 0,
                field: KEYS[i],
                reason: "missing".into(),
            })
        };
        let g = Self {
            apex_x: get(0)?,
            apex_y: get(1)?,
            theta_start: get(2)?.to_radians(),
            theta_end: get(3)?.to_radians(),
            r_min: get(4)?,
            r_max: get(5)?,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_sidecar(&text)
    }
}

/// 4-connected components of `mask`, as pixel-index lists sorted by size descending.
fn components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut label = vec![false; mask.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] {
            continue;
        }
        let mut comp = Vec::new();
        label[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if mask[j] && !label[j] {
                    label[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        comps.push(comp);
    }
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    comps
}

/// Least-squares fit of `x = a + b y`; returns `(a, b)`.
fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut syy) = (0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if syy == 0.0 {
        return None;
    }
    let b = sxy / syy;
    Some((mx - b * my, b))
}

/// Recovers the sector geometry of a display frame.
///
/// The support mask is `pixel > 8`; the largest 4-connected component is the
/// sector. Its per-row lateral boundary points, taken over the middle of each
/// straight edge (between the topmost row and the row of extreme lateral
/// extent), are fitted by least squares to two lines whose intersection is the
/// apex. Radii are the extreme apex distances of the component.
pub fn detect_sector(display: &GrayImage) -> Result<SectorGeometry> {
    let (w, h) = display.dims();
    let mask: Vec<bool> = display
        .pixels()
        .iter()
        .map(|&p| p > SUPPORT_THRESHOLD)
        .collect();
    let comps = components(&mask, w, h);
    let min_size = (MIN_REGION_FRACTION * (w * h) as f64).ceil() as usize;
    let main = match comps.first() {
        Some(c) if c.len() >= min_size => c,
        _ => {
            return Err(Error::DetectionFailure(format!(
                "no bright connected region covering {:.0}% of the raster",
                MIN_REGION_FRACTION * 100.0
            )))
        }
    };
    if let Some(second) = comps.get(1) {
        if second.len() >= min_size {
            return Err(Error::Ambiguous(format!(
                "{} regions each cover at least {:.0}% of the raster",
                comps.iter().filter(|c| c.len() >= min_size).count(),
                MIN_REGION_FRACTION * 100.0
            )));
        }
    }

    // per-row lateral extent of the component
    let mut left = vec![usize::MAX; h];
    let mut right = vec![0usize; h];
    for &i in main {
        let (x, y) = (i % w, i / w);
        left[y] = left[y].min(x);
        right[y] = right[y].max(x);
    }
    let rows: Vec<usize> = (0..h).filter(|&y| left[y] != usize::MAX).collect();
    let top = rows[0];
    let bottom = *rows.last().unwrap_or(&top);

    let band = |extreme_row: usize, pick: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
        let span = extreme_row.saturating_sub(top) as f64;
        let lo = top + (0.2 * span).round() as usize;
        let hi = top + (0.8 * span).round() as usize;
        (lo..=hi)
            .filter(|&y| left[y] != usize::MAX)
            .map(|y| (pick(y), y as f64))
            .collect()
    };
    // first row where the lateral extent peaks
    let left_extreme = rows
        .iter()
        .copied()
        .min_by_key(|&y| (left[y], y))
        .unwrap_or(bottom);
    let right_extreme = rows
        .iter()
        .copied()
        .min_by_key(|&y| (std::cmp::Reverse(right[y]), y))
        .unwrap_or(bottom);
    // boundary pixels are the first inside sample, half a pixel in from the edge on average
    let left_pts = band(left_extreme, &|y| left[y] as f64 - 0.5);
    let right_pts = band(right_extreme, &|y| right[y] as f64 + 0.5);
    let fail = || Error::DetectionFailure("lateral edges too short to fit".into());
    let (al, bl) = fit_line(&left_pts).ok_or_else(fail)?;
    let (ar, br) = fit_line(&right_pts).ok_or_else(fail)?;
    if (br - bl).abs() < 1e-9 {
        return Err(Error::DetectionFailure("parallel lateral edges".into()));
    }
    let apex_y = (al - ar) / (br - bl);
    let apex_x = al + bl * apex_y;
    let theta_start = bl.atan();
    let theta_end = br.atan();

    let (mut r_lo, mut r_hi) = (f64::INFINITY, 0.0f64);
    for &i in main {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let r = (x - apex_x).hypot(y - apex_y);
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
    }
    let geom = SectorGeometry {
        apex_x,
        apex_y,
        theta_start,
        theta_end,
        r_min: r_lo,
        r_max: r_hi,
    };
    geom.validate()
        .map_err(|e| Error::DetectionFailure(format!("implausible sector: {e}")))?;
    Ok(geom)
}

/// Resamples the sector onto an `out_w x out_h` grid: columns sweep the angle,
/// rows sweep the radius, each output pixel a bilinear display sample.
pub fn to_cartesian(
    display: &GrayImage,
    geom: &SectorGeometry,
    out_w: usize,
    out_h: usize,
) -> Result<GrayImage> {
    geom.validate()?;
    if out_w < 2 || out_h < 2 {
        return Err(Error::Geometry(format!(
            "output grid {out_w}x{out_h} has zero span"
        )));
    }
    let dr = (geom.r_max - geom.r_min) / (out_h - 1) as f64;
    let dt = (geom.theta_end - geom.theta_start) / (out_w - 1) as f64;
    let trig: Vec<(f64, f64)> = (0..out_w)
        .map(|u| {
            let t = geom.theta_start + u as f64 * dt;
            (t.sin(), t.cos())
        })
        .collect();
    let mut out = GrayImage::new(out_w, out_h, display.domain());
    for v in 0..out_h {
        let r = geom.r_min + v as f64 * dr;
        for (u, &(s, c)) in trig.iter().enumerate() {
            let x = geom.apex_x + r * s;
            let y = geom.apex_y + r * c;
            out.set(u, v, display.sample_bilinear(x, y));
        }
    }
    Ok(out)
}

/// Inverse of the [`to_cartesian`] grid mapping: polar point to `(u, v)`.
pub fn cartesian_coords(
    geom: &SectorGeometry,
    r: f64,
    theta: f64,
    out_w: usize,
    out_h: usize,
) -> (f64, f64) {
    let u = (theta - geom.theta_start) / (geom.theta_end - geom.theta_start) * (out_w - 1) as f64;
    let v = (r - geom.r_min) / (geom.r_max - geom.r_min) * (out_h - 1) as f64;
    (u, v)
}

/// Detection, inward margin, and resampling in one step.
pub fn scan_convert(display: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    let geom = detect_sector(display)?.inset(DEFAULT_SAMPLING_MARGIN)?;
    to_cartesian(display, &geom, out_w, out_h)
}

pub fn compute_mean(train_images: &[GrayImage]) -> Result<GrayImage> {
    let first = train_images
        .first()
        .ok_or(Error::EmptyInput("mean of zero images"))?;
    let dims = first.dims();
    let mut acc = vec![0.0f64; dims.0 * dims.1];
    for (i, img) in train_images.iter().enumerate() {
        if img.dims() != dims {
            return Err(Error::Shape(format!(
                "image {i} is {:?}, expected {:?}",
                img.dims(),
                dims
            )));
        }
        for (a, &p) in acc.iter_mut().zip(img.pixels()) {
            *a += p;
        }
    }
    let n = train_images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GrayImage::from_pixels(dims.0, dims.1, acc, ValueDomain::Raw)
}

/// `img / 255 - mean / 255`, per pixel.
pub fn preprocess(img: &GrayImage, mean: &GrayImage) -> Result<GrayImage> {
    if img.dims() != mean.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs mean {:?}",
            img.dims(),
            mean.dims()
        )));
    }
    if img.domain() != ValueDomain::Raw {
        return Err(Error::Domain("preprocess expects a raw-domain image".into()));
    }
    let px = img
        .pixels()
        .iter()
        .zip(mean.pixels())
        .map(|(&p, &m)| p / 255.0 - m / 255.0)
        .collect();
    GrayImage::from_pixels(img.width(), img.height(), px, ValueDomain::Normalized)
}

/// Mean image container: `ECHOMEAN 1\n<w> <h>\n` followed by `w*h` little-endian f64.
pub fn encode_mean(mean: &GrayImage) -> Vec<u8> {
    let mut out = format!("ECHOMEAN 1\n{} {}\n", mean.width(), mean.height()).into_bytes();
    for p in mean.pixels() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_mean(data: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut lines = data.splitn(3, |&b| b == b'\n');
    let magic = lines.next().ok_or("empty mean file")?;
    if magic != b"ECHOMEAN 1" {
        return Err("not an ECHOMEAN 1 container".into());
    }
    let dims = String::from_utf8_lossy(lines.next().ok_or("missing dimensions")?).into_owned();
    let mut it = dims.split_whitespace().map(|t| t.parse::<usize>());
    let (w, h) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(format!("bad dimensions `{dims}`")),
    };
    let body = lines.next().unwrap_or(&[]);
    if body.len() != w * h * 8 {
        return Err(format!("expected {} payload bytes, found {}", w * h * 8, body.len()));
    }
    let px = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    GrayImage::from_pixels(w, h, px, ValueDomain::Raw).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn geom() -> SectorGeometry {
        SectorGeometry {
            apex_x: 100.0,
            apex_y: 10.0,
            theta_start: (-35f64).to_radians(),
            theta_end: 35f64.to_radians(),
            r_min: 20.0,
            r_max: 150.0,
        }
    }

    fn render_constant(g: &SectorGeometry, w: usize, h: usize, value: f64) -> GrayImage {
        let mut img = GrayImage::new(w, h, ValueDomain::Raw);
        for y in 0..h {
            for x in 0..w {
                if g.contains(x as f64, y as f64) {
                    img.set(x, y, value);
                }
            }
        }
        img
    }

    #[test]
    fn empty_display_fails_detection() {
        let img = GrayImage::new(64, 64, ValueDomain::Raw);
        assert!(matches!(detect_sector(&img), Err(Error::DetectionFailure(_))));
    }

    #[test]
    fn two_large_regions_are_ambiguous() {
        let mut img = GrayImage::new(100, 100, ValueDomain::Raw);
        for y in 0..100 {
            for x in (0..30).chain(60..90) {
                img.set(x, y, 100.0);
            }
        }
        assert!(matches!(detect_sector(&img), Err(Error::Ambiguous(_))));
    }

    #[test]
    fn symmetric_sector_recovers_symmetric_angles() {
        let g = geom();
        let img = render_constant(&g, 200, 170, 128.0);
        let d = detect_sector(&img).unwrap();
        assert!((d.theta_start.abs() - d.theta_end.abs()).abs().to_degrees() < 0.5);
        assert!((d.theta_end - g.theta_end).abs().to_degrees() < 1.0);
        assert!((d.r_min - g.r_min).abs() < 2.0);
        assert!((d.r_max - g.r_max).abs() < 2.0);
    }

    #[test]
    fn to_cartesian_output_dimensions() {
        let g = geom();
        let img = render_constant(&g, 200, 170, 128.0);
        let out = to_cartesian(&img, &g, 256, 256).unwrap();
        assert_eq!(out.dims(), (256, 256));
    }

    #[test]
    fn constant_sector_converts_to_constant() {
        let g = geom();
        let img = render_constant(&g, 200, 170, 128.0);
        let out = to_cartesian(&img, &g.inset(DEFAULT_SAMPLING_MARGIN).unwrap(), 64, 64).unwrap();
        let (lo, hi) = out.min_max();
        assert!(lo >= 127.0 && hi <= 129.0, "{lo} {hi}");
    }

    #[test]
    fn point_target_lands_on_inverse_mapped_pixel() {
        let g = geom();
        let (w, h) = (200, 170);
        let mut img = GrayImage::new(w, h, ValueDomain::Raw);
        let (r_star, t_star) = (90.0, 12f64.to_radians());
        let (px, py) = g.point_at(r_star, t_star);
        let (ix, iy) = (px.round() as usize, py.round() as usize);
        img.set(ix, iy, 255.0);
        let (out_w, out_h) = (128, 128);
        let out = to_cartesian(&img, &g, out_w, out_h).unwrap();
        let argmax = out
            .pixels()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| (i % out_w, i / out_w))
            .unwrap();
        // the rounded target pixel, inverse-mapped through the closed form
        let (r_pix, t_pix) = g.polar_of(ix as f64, iy as f64);
        let (u, v) = cartesian_coords(&g, r_pix, t_pix, out_w, out_h);
        assert!((argmax.0 as f64 - u).abs() <= 1.0, "{argmax:?} vs {u}");
        assert!((argmax.1 as f64 - v).abs() <= 1.0, "{argmax:?} vs {v}");
    }

    #[test]
    fn degenerate_output_grid_is_geometry_error() {
        let g = geom();
        let img = GrayImage::new(10, 10, ValueDomain::Raw);
        assert!(matches!(to_cartesian(&img, &g, 1, 64), Err(Error::Geometry(_))));
        let bad = SectorGeometry {
            theta_end: g.theta_start,
            ..g
        };
        assert!(matches!(to_cartesian(&img, &bad, 64, 64), Err(Error::Geometry(_))));
    }

    #[test]
    fn mean_examples() {
        let a = GrayImage::filled(3, 2, 0.0, ValueDomain::Raw);
        let b = GrayImage::filled(3, 2, 255.0, ValueDomain::Raw);
        assert_eq!(compute_mean(std::slice::from_ref(&a)).unwrap(), a);
        let m = compute_mean(&[a.clone(), b]).unwrap();
        assert!(m.pixels().iter().all(|&p| p == 127.5));
        assert!(matches!(compute_mean(&[]), Err(Error::EmptyInput(_))));
        let c = GrayImage::new(2, 2, ValueDomain::Raw);
        assert!(matches!(compute_mean(&[a, c]), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_matches_direct_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<GrayImage> = (0..3)
            .map(|_| {
                let px = (0..35).map(|_| rng.gen_range(0..=255) as f64).collect();
                GrayImage::from_pixels(7, 5, px, ValueDomain::Raw).unwrap()
            })
            .collect();
        let m = compute_mean(&imgs).unwrap();
        for i in 0..35 {
            let sum: i64 = imgs.iter().map(|im| im.pixels()[i] as i64).sum();
            assert_eq!(m.pixels()[i], sum as f64 / 3.0);
        }
    }

    #[test]
    fn preprocess_examples() {
        let img = GrayImage::filled(4, 4, 255.0, ValueDomain::Raw);
        let mean = GrayImage::filled(4, 4, 127.5, ValueDomain::Raw);
        let out = preprocess(&img, &mean).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0.5));
        assert_eq!(out.domain(), ValueDomain::Normalized);
        let zero = preprocess(&mean, &mean).unwrap();
        assert!(zero.pixels().iter().all(|&p| p == 0.0));
        let small = GrayImage::new(2, 2, ValueDomain::Raw);
        assert!(matches!(preprocess(&small, &mean), Err(Error::Shape(_))));
    }

    #[test]
    fn preprocess_matches_scalar_recomputation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let px = (0..64).map(|_| rng.gen_range(0.0..=255.0)).collect();
            GrayImage::from_pixels(8, 8, px, ValueDomain::Raw).unwrap()
        };
        let img = mk(&mut rng);
        let mean = mk(&mut rng);
        let out = preprocess(&img, &mean).unwrap();
        for i in 0..64 {
            let expect = (img.pixels()[i] - mean.pixels()[i]) / 255.0;
            assert!((out.pixels()[i] - expect).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&out.pixels()[i]));
        }
    }

    #[test]
    fn sidecar_and_mean_containers_round_trip() {
        let g = geom();
        let back = SectorGeometry::parse_sidecar(&g.to_sidecar()).unwrap();
        assert!((back.theta_end - g.theta_end).abs() < 1e-12);
        assert_eq!(back.apex_x, g.apex_x);
        let m = GrayImage::from_pixels(2, 1, vec![1.25, 200.5], ValueDomain::Raw).unwrap();
        assert_eq!(decode_mean(&encode_mean(&m)).unwrap(), m);
    }
}
