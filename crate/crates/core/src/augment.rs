//! Seeded augmentation for both pipeline stages.
//!
//! Geometric classification augmentation is one affine map composed, about the
//! image center, as `zoom . rotation . shear . shift` (shift applied first).
//! [`AffineTransform`] stores the output-to-input map used for resampling; boxes
//! travel through its inverse.

use std::fmt::Write as _;

use rand::Rng;

use crate::annotate::BBox;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::GroundTruth;

/// Boxes losing more than this share of their area to a crop are dropped.
pub const CROP_KEEP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyAugSpec {
    pub zoom_max: f64,
    pub shear_max: f64,
    /// Fraction of each dimension.
    pub shift_max: f64,
    pub rotate_max_deg: f64,
    /// Additive raw-intensity offset range.
    pub contrast_range: (f64, f64),
}

impl Default for ClassifyAugSpec {
    fn default() -> Self {
        Self {
            zoom_max: 0.15,
            shear_max: 0.03,
            shift_max: 0.15,
            rotate_max_deg: 10.0,
            contrast_range: (-100.0, 40.0),
        }
    }
}

impl ClassifyAugSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("zoom_max", self.zoom_max),
            ("shear_max", self.shear_max),
            ("shift_max", self.shift_max),
            ("rotate_max_deg", self.rotate_max_deg),
        ];
        for (field, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field,
                    reason: format!("{v} must be a non-negative number"),
                });
            }
        }
        if self.zoom_max >= 1.0 {
            return Err(Error::Config {
                field: "zoom_max",
                reason: "zoom factor would reach zero".into(),
            });
        }
        if !(self.contrast_range.0 <= self.contrast_range.1) {
            return Err(Error::Config {
                field: "contrast_range",
                reason: format!("{:?} is not ordered", self.contrast_range),
            });
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "zoom_max={}", self.zoom_max);
        let _ = writeln!(s, "shear_max={}", self.shear_max);
        let _ = writeln!(s, "shift_max={}", self.shift_max);
        let _ = writeln!(s, "rotate_max_deg={}", self.rotate_max_deg);
        let _ = writeln!(s, "contrast_min={}", self.contrast_range.0);
        let _ = writeln!(s, "contrast_max={}", self.contrast_range.1);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (line, key, value) in kv_pairs(text)? {
            match key {
                "zoom_max" => spec.zoom_max = value,
                "shear_max" => spec.shear_max = value,
                "shift_max" => spec.shift_max = value,
                "rotate_max_deg" => spec.rotate_max_deg = value,
                "contrast_min" => spec.contrast_range.0 = value,
                "contrast_max" => spec.contrast_range.1 = value,
                _ => return Err(unknown_key(line, key)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectAugSpec {
    pub horizontal_flip_prob: f64,
    /// Brightness offset drawn from `[-d, d]` raw units.
    pub brightness_max_delta: f64,
    /// Contrast gain drawn from this range.
    pub contrast_gain_range: (f64, f64),
    pub crop_min_area: f64,
    pub crop_aspect_range: (f64, f64),
    pub min_padded_size_ratio: (f64, f64),
    pub max_padded_size_ratio: (f64, f64),
}

impl Default for DetectAugSpec {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            brightness_max_delta: 0.2 * 255.0,
            contrast_gain_range: (0.8, 1.25),
            crop_min_area: 0.5,
            crop_aspect_range: (0.75, 1.33),
            min_padded_size_ratio: (1.0, 1.0),
            max_padded_size_ratio: (2.0, 1.0),
        }
    }
}

impl DetectAugSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::Config {
                field: "horizontal_flip_prob",
                reason: format!("{} outside [0, 1]", self.horizontal_flip_prob),
            });
        }
        if !(self.brightness_max_delta >= 0.0) {
            return Err(Error::Config {
                field: "brightness_max_delta",
                reason: "must be non-negative".into(),
            });
        }
        let (g0, g1) = self.contrast_gain_range;
        if !(g0 > 0.0 && g0 <= g1) {
            return Err(Error::Config {
                field: "contrast_gain_range",
                reason: format!("({g0}, {g1}) must be positive and ordered"),
            });
        }
        if !(self.crop_min_area > 0.0 && self.crop_min_area <= 1.0) {
            return Err(Error::Config {
                field: "crop_min_area",
                reason: format!("{} outside (0, 1]", self.crop_min_area),
            });
        }
        let (a0, a1) = self.crop_aspect_range;
        if !(a0 > 0.0 && a0 <= a1) {
            return Err(Error::Config {
                field: "crop_aspect_range",
                reason: format!("({a0}, {a1}) must be positive and ordered"),
            });
        }
        let (lo, hi) = (self.min_padded_size_ratio, self.max_padded_size_ratio);
        if !(lo.0 >= 1.0 && lo.1 >= 1.0 && hi.0 >= lo.0 && hi.1 >= lo.1) {
            return Err(Error::Config {
                field: "padded_size_ratio",
                reason: format!("min {lo:?} / max {hi:?} must be >= 1 and ordered"),
            });
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "horizontal_flip_prob={}", self.horizontal_flip_prob);
        let _ = writeln!(s, "brightness_max_delta={}", self.brightness_max_delta);
        let _ = writeln!(s, "contrast_gain_min={}", self.contrast_gain_range.0);
        let _ = writeln!(s, "contrast_gain_max={}", self.contrast_gain_range.1);
        let _ = writeln!(s, "crop_min_area={}", self.crop_min_area);
        let _ = writeln!(s, "crop_aspect_min={}", self.crop_aspect_range.0);
        let _ = writeln!(s, "crop_aspect_max={}", self.crop_aspect_range.1);
        let _ = writeln!(s, "min_padded_size_ratio_x={}", self.min_padded_size_ratio.0);
        let _ = writeln!(s, "min_padded_size_ratio_y={}", self.min_padded_size_ratio.1);
        let _ = writeln!(s, "max_padded_size_ratio_x={}", self.max_padded_size_ratio.0);
        let _ = writeln!(s, "max_padded_size_ratio_y={}", self.max_padded_size_ratio.1);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (line, key, value) in kv_pairs(text)? {
            match key {
                "horizontal_flip_prob" => spec.horizontal_flip_prob = value,
                "brightness_max_delta" => spec.brightness_max_delta = value,
                "contrast_gain_min" => spec.contrast_gain_range.0 = value,
                "contrast_gain_max" => spec.contrast_gain_range.1 = value,
                "crop_min_area" => spec.crop_min_area = value,
                "crop_aspect_min" => spec.crop_aspect_range.0 = value,
                "crop_aspect_max" => spec.crop_aspect_range.1 = value,
                "min_padded_size_ratio_x" => spec.min_padded_size_ratio.0 = value,
                "min_padded_size_ratio_y" => spec.min_padded_size_ratio.1 = value,
                "max_padded_size_ratio_x" => spec.max_padded_size_ratio.0 = value,
                "max_padded_size_ratio_y" => spec.max_padded_size_ratio.1 = value,
                _ => return Err(unknown_key(line, key)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn kv_pairs(text: &str) -> Result<Vec<(usize, &str, f64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: n + 1,
            field: "key=value",
            reason: format!("missing '=' in `{line}`"),
        })?;
        let value = v.trim().parse::<f64>().map_err(|_| Error::Parse {
            line: n + 1,
            field: "value",
            reason: format!("not a number: `{}`", v.trim()),
        })?;
        out.push((n + 1, k.trim(), value));
    }
    Ok(out)
}

fn unknown_key(line: usize, key: &str) -> Error {
    Error::Parse {
        line,
        field: "key",
        reason: format!("unknown key `{key}`"),
    }
}

/// Row-major 2x3 affine map `[a b c; d e f]`: `(x, y) -> (a x + b y + c, d x + e y + f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn from_linear(l: [[f64; 2]; 2], t: (f64, f64)) -> Self {
        Self {
            m: [[l[0][0], l[0][1], t.0], [l[1][0], l[1][1], t.1]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_linear([[1.0, 0.0], [0.0, 1.0]], (dx, dy))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `self . other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
            row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        AffineTransform { m }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if !(det.abs() > 1e-12) || !det.is_finite() {
            return Err(Error::Transform(format!("singular transform (det {det})")));
        }
        let m = &self.m;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let tx = -(a * m[0][2] + b * m[1][2]);
        let ty = -(c * m[0][2] + d * m[1][2]);
        Ok(Self::from_linear([[a, b], [c, d]], (tx, ty)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyParams {
    pub zoom: (f64, f64),
    pub rotation_deg: f64,
    pub shear: f64,
    pub shift: (f64, f64),
    pub contrast_delta: f64,
}

impl ClassifyParams {
    /// Output-to-input map for an image of the given size.
    pub fn transform(&self, width: usize, height: usize) -> AffineTransform {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let shift = AffineTransform::translation(self.shift.0, self.shift.1);
        let shear = AffineTransform::from_linear([[1.0, self.shear], [0.0, 1.0]], (0.0, 0.0));
        let rot = AffineTransform::from_linear([[c, -s], [s, c]], (0.0, 0.0));
        let zoom = AffineTransform::from_linear([[self.zoom.0, 0.0], [0.0, self.zoom.1]], (0.0, 0.0));
        let forward = AffineTransform::translation(cx, cy)
            .compose(&zoom)
            .compose(&rot)
            .compose(&shear)
            .compose(&shift)
            .compose(&AffineTransform::translation(-cx, -cy));
        forward
            .inverse()
            .expect("zoom factors are bounded away from zero")
    }
}

fn symmetric(rng: &mut impl Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

fn in_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn sample_classify_params(spec: &ClassifyAugSpec, width: usize, height: usize, rng: &mut impl Rng) -> ClassifyParams {
    let zoom = (
        1.0 + symmetric(rng, spec.zoom_max),
        1.0 + symmetric(rng, spec.zoom_max),
    );
    let rotation_deg = symmetric(rng, spec.rotate_max_deg);
    let shear = symmetric(rng, spec.shear_max);
    let shift = (
        symmetric(rng, spec.shift_max * width as f64),
        symmetric(rng, spec.shift_max * height as f64),
    );
    let contrast_delta = in_range(rng, spec.contrast_range.0, spec.contrast_range.1);
    ClassifyParams {
        zoom,
        rotation_deg,
        shear,
        shift,
        contrast_delta,
    }
}

/// Draws one classification augmentation: the resampling transform and the additive contrast offset.
pub fn sample_classify_transform(
    spec: &ClassifyAugSpec,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> (AffineTransform, f64) {
    let p = sample_classify_params(spec, width, height, rng);
    (p.transform(width, height), p.contrast_delta)
}

/// Bilinear resampling through the output-to-input map, zero fill.
pub fn apply_affine(img: &GrayImage, t: &AffineTransform) -> Result<GrayImage> {
    t.inverse()?;
    let (w, h) = img.dims();
    let mut out = GrayImage::new(w, h, img.domain());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.apply(x as f64, y as f64);
            out.set(x, y, img.sample_bilinear(sx, sy));
        }
    }
    Ok(out)
}

/// Maps a box's corners through an input-to-output point map and takes the hull.
pub fn map_box(b: &BBox, forward: &AffineTransform) -> BBox {
    let corners = [
        forward.apply(b.x_min, b.y_min),
        forward.apply(b.x_max, b.y_min),
        forward.apply(b.x_min, b.y_max),
        forward.apply(b.x_max, b.y_max),
    ];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    BBox::new(x0, y0, x1, y1)
}

/// Boxes consistent with [`apply_affine`] under `t`, clipped to `bounds`; fully
/// clipped boxes are removed.
pub fn apply_affine_boxes(
    boxes: &[GroundTruth],
    t: &AffineTransform,
    bounds: (usize, usize),
) -> Result<Vec<GroundTruth>> {
    let forward = t.inverse()?;
    Ok(boxes
        .iter()
        .filter_map(|g| {
            map_box(&g.bbox, &forward)
                .clip_to(bounds.0 as f64, bounds.1 as f64)
                .map(|bbox| GroundTruth { bbox, valve: g.valve })
        })
        .collect())
}

pub fn horizontal_flip(img: &GrayImage, boxes: &[GroundTruth]) -> (GrayImage, Vec<GroundTruth>) {
    let (w, h) = img.dims();
    let mut out = GrayImage::new(w, h, img.domain());
    for y in 0..h {
        for x in 0..w {
            out.set(w - 1 - x, y, img.get(x, y));
        }
    }
    let wf = w as f64;
    let flipped = boxes
        .iter()
        .map(|g| GroundTruth {
            bbox: BBox::new(wf - g.bbox.x_max, g.bbox.y_min, wf - g.bbox.x_min, g.bbox.y_max),
            valve: g.valve,
        })
        .collect();
    (out, flipped)
}

pub fn adjust_brightness(img: &GrayImage, delta: f64) -> GrayImage {
    let mut out = img.clone();
    out.pixels_mut()
        .iter_mut()
        .for_each(|p| *p = (*p + delta).clamp(0.0, 255.0));
    out
}

/// Scales deviations from the image mean by `gain`.
pub fn adjust_contrast(img: &GrayImage, gain: f64) -> GrayImage {
    let mean = img.mean();
    let mut out = img.clone();
    out.pixels_mut()
        .iter_mut()
        .for_each(|p| *p = (mean + gain * (*p - mean)).clamp(0.0, 255.0));
    out
}

pub fn adjust_contrast_brightness(img: &GrayImage, gain: f64, brightness_delta: f64) -> GrayImage {
    adjust_brightness(&adjust_contrast(img, gain), brightness_delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

fn sample_crop_window(w: usize, h: usize, spec: &DetectAugSpec, rng: &mut impl Rng) -> CropWindow {
    let total = (w * h) as f64;
    let full = CropWindow { x: 0, y: 0, width: w, height: h };
    if spec.crop_min_area >= 1.0 {
        return full;
    }
    for _ in 0..100 {
        let area = rng.gen_range(spec.crop_min_area..=1.0) * total;
        let aspect = in_range(rng, spec.crop_aspect_range.0, spec.crop_aspect_range.1);
        let cw = ((area * aspect).sqrt().round() as usize).min(w);
        let ch = ((area / aspect).sqrt().round() as usize).min(h);
        if cw == 0 || ch == 0 || ((cw * ch) as f64) < spec.crop_min_area * total {
            continue;
        }
        let x = rng.gen_range(0..=w - cw);
        let y = rng.gen_range(0..=h - ch);
        return CropWindow { x, y, width: cw, height: ch };
    }
    full
}

/// Crops a window of at least `crop_min_area` of the image, then zero-pads to a
/// canvas whose per-axis ratio to the crop lies between the configured bounds.
///
/// Boxes are clipped to the window and dropped when under
/// [`CROP_KEEP_FRACTION`] of their original area survives.
pub fn random_crop_and_pad(
    img: &GrayImage,
    boxes: &[GroundTruth],
    rng: &mut impl Rng,
    spec: &DetectAugSpec,
) -> Result<(GrayImage, Vec<GroundTruth>)> {
    spec.validate()?;
    let (w, h) = img.dims();
    let win = sample_crop_window(w, h, spec, rng);
    let rx = in_range(rng, spec.min_padded_size_ratio.0, spec.max_padded_size_ratio.0);
    let ry = in_range(rng, spec.min_padded_size_ratio.1, spec.max_padded_size_ratio.1);
    let pw = ((win.width as f64 * rx).round() as usize).max(win.width);
    let ph = ((win.height as f64 * ry).round() as usize).max(win.height);
    let ox = rng.gen_range(0..=pw - win.width);
    let oy = rng.gen_range(0..=ph - win.height);

    let mut out = GrayImage::new(pw, ph, img.domain());
    for y in 0..win.height {
        for x in 0..win.width {
            out.set(ox + x, oy + y, img.get(win.x + x, win.y + y));
        }
    }
    let window = BBox::new(
        win.x as f64,
        win.y as f64,
        (win.x + win.width) as f64,
        (win.y + win.height) as f64,
    );
    let dx = ox as f64 - win.x as f64;
    let dy = oy as f64 - win.y as f64;
    let kept = boxes
        .iter()
        .filter_map(|g| {
            let clipped = g.bbox.intersection(&window)?;
            (clipped.area() >= CROP_KEEP_FRACTION * g.bbox.area()).then(|| GroundTruth {
                bbox: clipped.translate(dx, dy),
                valve: g.valve,
            })
        })
        .collect();
    Ok((out, kept))
}

/// Flip, brightness/contrast jitter, then crop-and-pad, all drawn from `rng`.
pub fn augment_for_detection(
    img: &GrayImage,
    boxes: &[GroundTruth],
    spec: &DetectAugSpec,
    rng: &mut impl Rng,
) -> Result<(GrayImage, Vec<GroundTruth>)> {
    spec.validate()?;
    let (mut img, mut boxes) = if rng.gen_bool(spec.horizontal_flip_prob) {
        horizontal_flip(img, boxes)
    } else {
        (img.clone(), boxes.to_vec())
    };
    let delta = symmetric(rng, spec.brightness_max_delta);
    img = adjust_brightness(&img, delta);
    let gain = in_range(rng, spec.contrast_gain_range.0, spec.contrast_gain_range.1);
    img = adjust_contrast(&img, gain);
    let (img2, b2) = random_crop_and_pad(&img, &boxes, rng, spec)?;
    img = img2;
    boxes = b2;
    Ok((img, boxes))
}

/// Geometric warp plus additive contrast offset; output stays within the value range of
/// the input domain (`[0, 255]` for raw images).
pub fn augment_for_classification(
    img: &GrayImage,
    spec: &ClassifyAugSpec,
    rng: &mut impl Rng,
) -> Result<GrayImage> {
    spec.validate()?;
    let (w, h) = img.dims();
    let (t, delta) = sample_classify_transform(spec, w, h, rng);
    let warped = apply_affine(img, &t)?;
    Ok(match img.domain() {
        crate::image::ValueDomain::Raw => adjust_brightness(&warped, delta),
        crate::image::ValueDomain::Normalized => {
            let mut out = warped;
            out.pixels_mut()
                .iter_mut()
                .for_each(|p| *p = (*p + delta / 255.0).clamp(-1.0, 1.0));
            out
        }
    })
}
