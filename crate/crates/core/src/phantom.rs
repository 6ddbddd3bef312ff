//! Seeded synthetic echo-like clips with known sector geometry, view and valves.
//!
//! Scenes are laid out in normalized Cartesian coordinates `(s, t)` in `[0, 1]^2`
//! of the conversion frame: `s` sweeps the angle left to right and `t` the depth
//! from the apex downward. The conversion frame is the ground-truth sector
//! inset by [`DEFAULT_SAMPLING_MARGIN`], i.e. exactly the grid
//! [`crate::scanconvert::scan_convert`] resamples onto, so annotations expressed
//! at [`ANNOTATION_FRAME_SIZE`] line up with scan-converted frames.

use std::path::Path;

use chrono::NaiveDateTime;
use rand::Rng;

use crate::annotate::{Point, ValveAnnotation, ValveClass};
use crate::datasetio::{ClipMeta, ViewClass};
use crate::error::{Error, Result};
use crate::image::{GrayImage, ValueDomain};
use crate::scanconvert::{SectorGeometry, DEFAULT_SAMPLING_MARGIN};
use crate::util::rng_for;

/// Side of the square Cartesian frame annotations refer to.
pub const ANNOTATION_FRAME_SIZE: usize = 256;
/// Simulated heartbeat period in seconds.
pub const HEARTBEAT_PERIOD_S: f64 = 1.0;
/// Maximum leaflet opening angle.
pub const MAX_OPENING_DEG: f64 = 35.0;
const GLYPH_INTENSITY: f64 = 200.0;
const GLYPH_CLEARANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub display_width: usize,
    pub display_height: usize,
    pub view: ViewClass,
    pub heartbeats: usize,
    pub frame_rate: f64,
    pub noise_level: f64,
    pub clip_id: String,
    pub acquired_at: NaiveDateTime,
}

impl PhantomConfig {
    pub fn new(seed: u64, view: ViewClass) -> Self {
        Self {
            seed,
            display_width: 160,
            display_height: 144,
            view,
            heartbeats: 1,
            frame_rate: 50.0,
            noise_level: 0.2,
            clip_id: format!("p{seed:08x}"),
            acquired_at: NaiveDateTime::parse_from_str("2017-03-01T08:00:00", "%Y-%m-%dT%H:%M:%S")
                .expect("valid literal"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.display_width < 64 {
            return Err(Error::Config {
                field: "display_width",
                reason: format!("{} is below 64", self.display_width),
            });
        }
        if self.display_height < 64 {
            return Err(Error::Config {
                field: "display_height",
                reason: format!("{} is below 64", self.display_height),
            });
        }
        if self.heartbeats < 1 {
            return Err(Error::Config {
                field: "heartbeats",
                reason: "at least one heartbeat".into(),
            });
        }
        if !(50.0..=70.0).contains(&self.frame_rate) {
            return Err(Error::Config {
                field: "frame_rate",
                reason: format!("{} outside [50, 70] frames/s", self.frame_rate),
            });
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config {
                field: "noise_level",
                reason: format!("{} outside [0, 1]", self.noise_level),
            });
        }
        if self.clip_id.is_empty() || self.clip_id.contains(['|', '/', '\\']) {
            return Err(Error::Config {
                field: "clip_id",
                reason: format!("`{}` is empty or contains a separator", self.clip_id),
            });
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.frame_rate * self.heartbeats as f64 * HEARTBEAT_PERIOD_S).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomClip {
    pub frames: Vec<GrayImage>,
    pub meta: ClipMeta,
    pub geometry: SectorGeometry,
    /// One annotation per valve, on the first heartbeat's fully-closed frame.
    pub annotations: Vec<ValveAnnotation>,
    /// The fully-closed frame of every heartbeat.
    pub closed_frames: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, s: f64, t: f64) -> bool {
        let ds = (s - self.center.0) / self.radii.0;
        let dt = (t - self.center.1) / self.radii.1;
        ds * ds + dt * dt <= 1.0
    }
}

/// A valve as hinge points plus the flap-coaptation point when closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveLayout {
    pub class: ValveClass,
    pub left: (f64, f64),
    pub center: (f64, f64),
    pub right: (f64, f64),
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub tissue: f64,
    pub chambers: Vec<Ellipse>,
    pub valves: Vec<ValveLayout>,
    /// Views without anatomy render speckle only.
    pub speckle_only: bool,
}

/// What to paint inside the sector of one display frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ContentSpec {
    Constant(f64),
    Scene {
        layout: SceneLayout,
        /// 0 = fully closed, 1 = fully open.
        openness: f64,
        /// Chamber radius scale for the cardiac phase.
        chamber_scale: f64,
    },
}

/// Ground-truth sector geometry drawn for a display raster.
pub fn sample_geometry(width: usize, height: usize, rng: &mut impl Rng) -> SectorGeometry {
    let (w, h) = (width as f64, height as f64);
    let half = rng.gen_range(30.0f64..40.0).to_radians();
    let offset = rng.gen_range(-3.0f64..3.0).to_radians();
    let theta_start = -half + offset;
    let theta_end = half + offset;
    let apex_x = w / 2.0 + rng.gen_range(-0.02..0.02) * w;
    let apex_y = rng.gen_range(0.03..0.08) * h;
    let edge = 3.0;
    let mut r_max = h - edge - apex_y;
    r_max = r_max.min((w - 1.0 - edge - apex_x) / theta_end.sin());
    r_max = r_max.min((apex_x - edge) / (-theta_start).sin());
    r_max *= rng.gen_range(0.90..0.98);
    let r_min = rng.gen_range(0.15..0.22) * r_max;
    SectorGeometry {
        apex_x,
        apex_y,
        theta_start,
        theta_end,
        r_min,
        r_max,
    }
}

/// Maps normalized frame coordinates to display pixels.
pub fn frame_to_display(frame: &SectorGeometry, s: f64, t: f64) -> (f64, f64) {
    let theta = frame.theta_start + s * (frame.theta_end - frame.theta_start);
    let r = frame.r_min + t * (frame.r_max - frame.r_min);
    frame.point_at(r, theta)
}

pub fn display_to_frame(frame: &SectorGeometry, x: f64, y: f64) -> (f64, f64) {
    let (r, theta) = frame.polar_of(x, y);
    (
        (theta - frame.theta_start) / (frame.theta_end - frame.theta_start),
        (r - frame.r_min) / (frame.r_max - frame.r_min),
    )
}

/// The conversion frame of a ground-truth sector.
pub fn conversion_frame(geometry: &SectorGeometry) -> Result<SectorGeometry> {
    geometry.inset(DEFAULT_SAMPLING_MARGIN)
}

fn jitter(rng: &mut impl Rng, v: (f64, f64), amount: f64) -> (f64, f64) {
    (
        v.0 + rng.gen_range(-amount..=amount),
        v.1 + rng.gen_range(-amount..=amount),
    )
}

fn chamber(rng: &mut impl Rng, center: (f64, f64), radii: (f64, f64), intensity: f64) -> Ellipse {
    let scale = rng.gen_range(0.92..1.08);
    Ellipse {
        center: jitter(rng, center, 0.015),
        radii: (radii.0 * scale, radii.1 * scale),
        intensity,
    }
}

fn valve(rng: &mut impl Rng, class: ValveClass, left: (f64, f64), right: (f64, f64), intensity: f64) -> ValveLayout {
    let left = jitter(rng, left, 0.01);
    let right = jitter(rng, right, 0.01);
    let f = rng.gen_range(0.4..0.6);
    let center = (
        left.0 + f * (right.0 - left.0),
        left.1 + f * (right.1 - left.1) + rng.gen_range(-0.01..0.01),
    );
    ValveLayout {
        class,
        left,
        center,
        right,
        intensity,
    }
}

/// View-specific anatomy drawn from the seed.
pub fn scene_layout(view: ViewClass, rng: &mut impl Rng) -> SceneLayout {
    use ValveClass::*;
    let tissue = rng.gen_range(95.0..125.0);
    let dark = rng.gen_range(18.0..34.0);
    let bright = rng.gen_range(220.0..240.0);
    let mut chambers = Vec::new();
    let mut valves = Vec::new();
    let mut speckle_only = false;
    match view {
        ViewClass::Apical2 => {
            chambers.push(chamber(rng, (0.50, 0.33), (0.22, 0.26), dark));
            chambers.push(chamber(rng, (0.50, 0.80), (0.20, 0.14), dark));
            valves.push(valve(rng, MV, (0.32, 0.61), (0.68, 0.61), bright));
        }
        ViewClass::Apical3 => {
            chambers.push(chamber(rng, (0.44, 0.32), (0.19, 0.25), dark));
            chambers.push(chamber(rng, (0.42, 0.81), (0.16, 0.13), dark));
            chambers.push(chamber(rng, (0.80, 0.74), (0.09, 0.15), dark));
            valves.push(valve(rng, MV, (0.27, 0.62), (0.58, 0.62), bright));
            valves.push(valve(rng, AV, (0.71, 0.54), (0.89, 0.54), bright));
        }
        ViewClass::Apical4 => {
            chambers.push(chamber(rng, (0.30, 0.32), (0.13, 0.23), dark));
            chambers.push(chamber(rng, (0.68, 0.32), (0.16, 0.25), dark));
            chambers.push(chamber(rng, (0.30, 0.80), (0.13, 0.13), dark));
            chambers.push(chamber(rng, (0.68, 0.80), (0.15, 0.14), dark));
            valves.push(valve(rng, TV, (0.18, 0.61), (0.42, 0.61), bright));
            valves.push(valve(rng, MV, (0.54, 0.62), (0.82, 0.62), bright));
        }
        ViewClass::Apical5 => {
            chambers.push(chamber(rng, (0.27, 0.30), (0.12, 0.21), dark));
            chambers.push(chamber(rng, (0.70, 0.28), (0.15, 0.20), dark));
            chambers.push(chamber(rng, (0.27, 0.82), (0.12, 0.12), dark));
            chambers.push(chamber(rng, (0.72, 0.82), (0.14, 0.12), dark));
            chambers.push(chamber(rng, (0.50, 0.62), (0.07, 0.13), dark));
            valves.push(valve(rng, LVOT, (0.42, 0.45), (0.58, 0.45), bright));
        }
        ViewClass::Plax => {
            chambers.push(chamber(rng, (0.45, 0.55), (0.30, 0.12), dark));
            chambers.push(chamber(rng, (0.55, 0.22), (0.30, 0.07), dark));
        }
        ViewClass::PlaxRvif => {
            chambers.push(chamber(rng, (0.50, 0.35), (0.20, 0.18), dark));
            chambers.push(chamber(rng, (0.50, 0.75), (0.24, 0.10), dark));
        }
        ViewClass::PlaxRvot => {
            chambers.push(chamber(rng, (0.35, 0.45), (0.12, 0.30), dark));
            chambers.push(chamber(rng, (0.70, 0.50), (0.10, 0.20), dark));
        }
        ViewClass::Psax => {
            chambers.push(chamber(rng, (0.55, 0.55), (0.22, 0.22), dark));
            chambers.push(chamber(rng, (0.25, 0.40), (0.08, 0.20), dark));
        }
        ViewClass::PsaxAov => {
            chambers.push(chamber(rng, (0.50, 0.50), (0.10, 0.10), dark));
            chambers.push(chamber(rng, (0.25, 0.30), (0.10, 0.08), dark));
            chambers.push(chamber(rng, (0.75, 0.70), (0.10, 0.08), dark));
        }
        ViewClass::Subcostal4C => {
            chambers.push(chamber(rng, (0.40, 0.35), (0.18, 0.10), dark));
            chambers.push(chamber(rng, (0.45, 0.55), (0.22, 0.10), dark));
            chambers.push(chamber(rng, (0.70, 0.40), (0.10, 0.10), dark));
            chambers.push(chamber(rng, (0.72, 0.62), (0.10, 0.10), dark));
        }
        ViewClass::Noise => speckle_only = true,
    }
    SceneLayout {
        tissue: if speckle_only { 70.0 } else { tissue },
        chambers,
        valves,
        speckle_only,
    }
}

/// Leaflet polylines in normalized frame coordinates for a given openness.
/// Each leaflet pivots about its hinge toward the apex.
fn leaflets(v: &ValveLayout, openness: f64) -> [((f64, f64), (f64, f64)); 2] {
    let a = (MAX_OPENING_DEG * openness).to_radians();
    let rotate = |hinge: (f64, f64), tip: (f64, f64), angle: f64| {
        let (dx, dy) = (tip.0 - hinge.0, tip.1 - hinge.1);
        let (s, c) = angle.sin_cos();
        (hinge.0 + c * dx - s * dy, hinge.1 + s * dx + c * dy)
    };
    [
        (v.left, rotate(v.left, v.center, -a)),
        (v.right, rotate(v.right, v.center, a)),
    ]
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

/// Deterministic pseudo-glyph pattern bit for a 3x5 cell.
fn glyph_bit(ch: usize, col: usize, row: usize) -> bool {
    let h = crate::util::mix((ch * 31 + row * 7 + col) as u64 ^ 0x61c8_8647);
    h & 3 != 0
}

fn paint_margin_glyphs(img: &mut GrayImage, geom: &SectorGeometry) {
    let (w, h) = img.dims();
    let clear = |x: f64, y: f64| {
        let (r, t) = geom.polar_of(x, y);
        let delta = (GLYPH_CLEARANCE / r.max(GLYPH_CLEARANCE)).min(1.0).asin();
        !(r <= geom.r_max + GLYPH_CLEARANCE
            && r >= geom.r_min - GLYPH_CLEARANCE
            && t >= geom.theta_start - delta
            && t <= geom.theta_end + delta)
    };
    let chars_per_line = 5;
    let lines = 4;
    for side in 0..2 {
        for line in 0..lines {
            for c in 0..chars_per_line {
                let ch = side * 100 + line * 10 + c;
                let x0 = if side == 0 {
                    3 + c * 5
                } else {
                    w.saturating_sub(3 + (chars_per_line - c) * 5)
                };
                let y0 = 3 + line * 8;
                for row in 0..5 {
                    for col in 0..3 {
                        let (x, y) = (x0 + col, y0 + row);
                        if x >= w || y >= h || !glyph_bit(ch, col, row) {
                            continue;
                        }
                        if clear(x as f64, y as f64) {
                            img.set(x, y, GLYPH_INTENSITY);
                        }
                    }
                }
            }
        }
    }
}

/// Renders one display frame: the sector filled from `content` with
/// multiplicative speckle, black elsewhere apart from fixed margin glyphs.
pub fn gen_display_frame(
    geometry: &SectorGeometry,
    width: usize,
    height: usize,
    content: &ContentSpec,
    noise_level: f64,
    rng: &mut impl Rng,
) -> Result<GrayImage> {
    geometry.validate()?;
    if !geometry.fits_raster(width, height) {
        return Err(Error::Geometry(format!(
            "sector does not fit a {width}x{height} raster"
        )));
    }
    let mut img = GrayImage::new(width, height, ValueDomain::Raw);
    let frame = conversion_frame(geometry).ok();

    // valve polylines in display space with their bounding boxes
    let mut strokes: Vec<(Vec<(f64, f64)>, f64, [f64; 4])> = Vec::new();
    let mut noise = noise_level;
    if let ContentSpec::Scene { layout, openness, .. } = content {
        if layout.speckle_only {
            noise = noise.max(0.6);
        }
        if let Some(frame) = &frame {
            for v in &layout.valves {
                for (a, b) in leaflets(v, *openness) {
                    let pts: Vec<(f64, f64)> = (0..=8)
                        .map(|k| {
                            let f = k as f64 / 8.0;
                            frame_to_display(frame, a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
                        })
                        .collect();
                    let bb = pts.iter().fold(
                        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                        |m, p| [m[0].min(p.0), m[1].min(p.1), m[2].max(p.0), m[3].max(p.1)],
                    );
                    strokes.push((pts, v.intensity, bb));
                }
            }
        }
    }

    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            if !geometry.contains(xf, yf) {
                continue;
            }
            let base = match content {
                ContentSpec::Constant(c) => *c,
                ContentSpec::Scene {
                    layout,
                    chamber_scale,
                    ..
                } => {
                    let mut v = layout.tissue;
                    if let Some(frame) = &frame {
                        let (s, t) = display_to_frame(frame, xf, yf);
                        for e in &layout.chambers {
                            let scaled = Ellipse {
                                radii: (e.radii.0 * chamber_scale, e.radii.1 * chamber_scale),
                                ..*e
                            };
                            if scaled.contains(s, t) {
                                v = e.intensity;
                            }
                        }
                    }
                    for (pts, intensity, bb) in &strokes {
                        if xf < bb[0] - 3.0 || xf > bb[2] + 3.0 || yf < bb[1] - 3.0 || yf > bb[3] + 3.0 {
                            continue;
                        }
                        let d = pts
                            .windows(2)
                            .map(|s| segment_distance((xf, yf), s[0], s[1]))
                            .fold(f64::INFINITY, f64::min);
                        // full intensity within 1 px of the centerline, linear falloff to 2 px
                        let alpha = (2.0 - d).clamp(0.0, 1.0);
                        v = v * (1.0 - alpha) + intensity * alpha;
                    }
                    v
                }
            };
            let factor = if noise > 0.0 {
                rng.gen_range(1.0 - noise..=1.0 + noise)
            } else {
                1.0
            };
            img.set(x, y, (base * factor).clamp(0.0, 255.0));
        }
    }
    paint_margin_glyphs(&mut img, geometry);
    Ok(img)
}

/// Frame span of every heartbeat (equal division, remainder to the last beat).
pub fn heartbeat_spans(frame_count: usize, heartbeats: usize) -> Vec<(usize, usize)> {
    let span = frame_count / heartbeats;
    (0..heartbeats)
        .map(|b| {
            let start = b * span;
            let end = if b + 1 == heartbeats { frame_count } else { start + span };
            (start, end)
        })
        .collect()
}

/// Valve openness in `[0, 1]` per frame and the closed frame of each beat.
pub fn cardiac_cycle(frame_count: usize, heartbeats: usize) -> (Vec<f64>, Vec<usize>) {
    let mut openness = vec![0.0; frame_count];
    let mut closed = Vec::with_capacity(heartbeats);
    for (start, end) in heartbeat_spans(frame_count, heartbeats) {
        let len = end - start;
        let kc = start + (len as f64 * 0.35) as usize;
        closed.push(kc);
        for (j, o) in openness.iter_mut().enumerate().take(end).skip(start) {
            let phase = (j as f64 - kc as f64) / len as f64;
            *o = (std::f64::consts::PI * phase).sin().powi(2);
        }
        openness[kc] = 0.0;
    }
    (openness, closed)
}

fn to_annotation_point(p: (f64, f64)) -> Point {
    let scale = (ANNOTATION_FRAME_SIZE - 1) as f64;
    Point::new(p.0 * scale, p.1 * scale)
}

/// Everything about a clip that does not depend on the frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    pub geometry: SectorGeometry,
    pub layout: SceneLayout,
    pub openness: Vec<f64>,
    pub closed_frames: Vec<usize>,
    pub spans: Vec<(usize, usize)>,
}

pub fn plan_clip(config: &PhantomConfig) -> Result<ClipPlan> {
    config.validate()?;
    let mut rng = rng_for(config.seed, 1);
    let geometry = sample_geometry(config.display_width, config.display_height, &mut rng);
    let layout = scene_layout(config.view, &mut rng);
    let frame_count = config.frame_count();
    let (openness, closed_frames) = cardiac_cycle(frame_count, config.heartbeats);
    let spans = heartbeat_spans(frame_count, config.heartbeats);
    Ok(ClipPlan {
        geometry,
        layout,
        openness,
        closed_frames,
        spans,
    })
}

/// Renders frame `j` of a planned clip; identical to the frame in [`gen_clip`].
pub fn render_frame(config: &PhantomConfig, plan: &ClipPlan, j: usize) -> Result<GrayImage> {
    let &o = plan
        .openness
        .get(j)
        .ok_or_else(|| Error::Domain(format!("frame {j} outside a {}-frame clip", plan.openness.len())))?;
    let (start, end) = plan
        .spans
        .iter()
        .copied()
        .find(|&(s, e)| j >= s && j < e)
        .expect("spans cover every frame");
    let phase = (j - start) as f64 / (end - start) as f64;
    let content = ContentSpec::Scene {
        layout: plan.layout.clone(),
        openness: o,
        chamber_scale: 1.0 + 0.04 * (2.0 * std::f64::consts::PI * phase).cos(),
    };
    let mut frame_rng = rng_for(config.seed, 1000 + j as u64);
    gen_display_frame(
        &plan.geometry,
        config.display_width,
        config.display_height,
        &content,
        config.noise_level,
        &mut frame_rng,
    )
}

pub fn clip_annotations(config: &PhantomConfig, plan: &ClipPlan) -> Vec<ValveAnnotation> {
    plan.layout
        .valves
        .iter()
        .map(|v| ValveAnnotation {
            clip_id: config.clip_id.clone(),
            frame_index: plan.closed_frames[0],
            valve: v.class,
            left: to_annotation_point(v.left),
            center: to_annotation_point(v.center),
            right: to_annotation_point(v.right),
        })
        .collect()
}

pub fn clip_meta(config: &PhantomConfig) -> ClipMeta {
    ClipMeta {
        clip_id: config.clip_id.clone(),
        acquired_at: config.acquired_at,
        frame_rate: config.frame_rate,
        heartbeats: config.heartbeats,
        frame_count: config.frame_count(),
        view: config.view,
    }
}

pub fn gen_clip(config: &PhantomConfig) -> Result<PhantomClip> {
    let plan = plan_clip(config)?;
    let frames = (0..plan.openness.len())
        .map(|j| render_frame(config, &plan, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomClip {
        frames,
        meta: clip_meta(config),
        annotations: clip_annotations(config, &plan),
        geometry: plan.geometry,
        closed_frames: plan.closed_frames,
    })
}

/// Display coordinates of an annotation-frame point.
pub fn annotation_to_display(geometry: &SectorGeometry, p: &Point) -> Result<(f64, f64)> {
    let frame = conversion_frame(geometry)?;
    let scale = (ANNOTATION_FRAME_SIZE - 1) as f64;
    Ok(frame_to_display(&frame, p.x / scale, p.y / scale))
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:04}.pgm")
}

/// Writes `frames/<clip_id>/NNNN.pgm` and `geometry/<clip_id>.txt` under `dir`.
pub fn write_clip(clip: &PhantomClip, dir: &Path) -> Result<()> {
    let frame_dir = dir.join("frames").join(&clip.meta.clip_id);
    for (i, f) in clip.frames.iter().enumerate() {
        f.write_pgm(frame_dir.join(frame_file_name(i)))?;
    }
    let geo_dir = dir.join("geometry");
    std::fs::create_dir_all(&geo_dir).map_err(|e| Error::io(&geo_dir, e))?;
    let path = geo_dir.join(format!("{}.txt", clip.meta.clip_id));
    std::fs::write(&path, clip.geometry.to_sidecar()).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small(seed: u64, view: ViewClass) -> PhantomConfig {
        PhantomConfig {
            display_width: 96,
            display_height: 88,
            ..PhantomConfig::new(seed, view)
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let mut c = small(1, ViewClass::Apical4);
        c.frame_rate = 30.0;
        assert!(matches!(gen_clip(&c), Err(Error::Config { field: "frame_rate", .. })));
        let mut c = small(1, ViewClass::Apical4);
        c.display_width = 32;
        assert!(matches!(gen_clip(&c), Err(Error::Config { field: "display_width", .. })));
        let mut c = small(1, ViewClass::Apical4);
        c.noise_level = 1.5;
        assert!(matches!(gen_clip(&c), Err(Error::Config { field: "noise_level", .. })));
    }

    #[test]
    fn deterministic_per_config() {
        let c = small(42, ViewClass::Apical3);
        let a = gen_clip(&c).unwrap();
        let b = gen_clip(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames[0].encode_pgm(), b.frames[0].encode_pgm());
    }

    #[test]
    fn frame_count_and_closed_frames() {
        let mut c = small(3, ViewClass::Apical2);
        c.heartbeats = 3;
        c.frame_rate = 55.0;
        let clip = gen_clip(&c).unwrap();
        assert_eq!(clip.frames.len(), 165);
        assert!(clip.frames.len() >= 10 * c.heartbeats);
        assert_eq!(clip.closed_frames.len(), 3);
        let (open, closed) = cardiac_cycle(165, 3);
        for (span, &kc) in heartbeat_spans(165, 3).iter().zip(&closed) {
            let zeros: Vec<usize> = (span.0..span.1).filter(|&j| open[j] == 0.0).collect();
            assert_eq!(zeros, vec![kc]);
        }
        for a in &clip.annotations {
            assert!(a.left.x < a.center.x && a.center.x < a.right.x);
        }
    }

    #[test]
    fn noise_view_has_no_annotations() {
        let clip = gen_clip(&small(5, ViewClass::Noise)).unwrap();
        assert!(clip.annotations.is_empty());
    }

    #[test]
    fn apical4_annotations_inside_sector() {
        let clip = gen_clip(&small(6, ViewClass::Apical4)).unwrap();
        let mut classes: Vec<ValveClass> = clip.annotations.iter().map(|a| a.valve).collect();
        classes.sort();
        assert_eq!(classes, vec![ValveClass::MV, ValveClass::TV]);
        for a in &clip.annotations {
            for p in [a.left, a.center, a.right] {
                let (x, y) = annotation_to_display(&clip.geometry, &p).unwrap();
                assert!(clip.geometry.contains_strict(x, y), "{p:?}");
            }
        }
    }

    #[test]
    fn constant_content_fills_sector() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let g = sample_geometry(120, 110, &mut rng);
        let img = gen_display_frame(&g, 120, 110, &ContentSpec::Constant(128.0), 0.0, &mut rng).unwrap();
        let mut inside = 0usize;
        for y in 0..110 {
            for x in 0..120 {
                if g.contains(x as f64, y as f64) {
                    assert_eq!(img.get(x, y), 128.0);
                    inside += 1;
                } else {
                    let v = img.get(x, y);
                    assert!(v == 0.0 || v == GLYPH_INTENSITY);
                }
            }
        }
        assert_eq!(img.get(0, 0), 0.0);
        let area = g.area();
        assert!((inside as f64 - area).abs() / area < 0.02, "{inside} vs {area}");
    }

    #[test]
    fn oversized_geometry_is_rejected() {
        let g = SectorGeometry {
            apex_x: 50.0,
            apex_y: 5.0,
            theta_start: -0.6,
            theta_end: 0.6,
            r_min: 10.0,
            r_max: 200.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gen_display_frame(&g, 100, 100, &ContentSpec::Constant(1.0), 0.0, &mut rng),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn apical_views_have_distinct_histograms() {
        let hist = |v: ViewClass| {
            let clip = gen_clip(&small(11, v)).unwrap();
            let mut h = [0usize; 16];
            let f = &clip.frames[0];
            for y in 0..f.height() {
                for x in 0..f.width() {
                    if clip.geometry.contains(x as f64, y as f64) {
                        h[(f.get(x, y) as usize / 16).min(15)] += 1;
                    }
                }
            }
            h
        };
        let views = [ViewClass::Apical2, ViewClass::Apical3, ViewClass::Apical4, ViewClass::Apical5];
        let hs: Vec<_> = views.iter().map(|&v| hist(v)).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(hs[i], hs[j]);
            }
        }
    }
}
