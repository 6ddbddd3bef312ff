//! Two-stage frame analysis: classify the view, then localize the valves that
//! view can show.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::annotate::{BBox, ValveClass};
use crate::datasetio::ViewClass;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::metrics::{map_eval, nms, Detection, EvalReport, EvalRow, GroundTruth, ImageEval, DEFAULT_NMS_IOU};
use crate::nnet::{Checkpoint, Tensor};
use crate::scanconvert::{preprocess, scan_convert};
use crate::util::{fnv1a, rng_for};

pub const CARTESIAN_SIZE: usize = 256;
pub const DISPLAY_THRESHOLD: f64 = 0.5;
/// Region-proposal count of the reference detector configuration.
pub const PROPOSAL_COUNT: usize = 300;
/// Training batch size of the reference detector configuration.
pub const DETECTOR_TRAIN_BATCH: usize = 1;
pub const NO_DETECTOR_REASON: &str = "no detector for view";

/// Valves a detector is run for in each view.
pub fn routing(view: ViewClass) -> &'static [ValveClass] {
    use ValveClass::*;
    match view {
        ViewClass::Apical2 => &[MV],
        ViewClass::Apical3 => &[MV, AV],
        ViewClass::Apical4 => &[MV, TV],
        ViewClass::Apical5 => &[LVOT],
        _ => &[],
    }
}

pub trait DetectorBackend {
    fn id(&self) -> &str;
    fn detect(&mut self, image_id: &str, img: &GrayImage, view: ViewClass) -> Result<Vec<Detection>>;
}

pub trait ViewClassifier {
    /// Probabilities over all view classes in enum order.
    fn classify(&mut self, image_id: &str, img: &GrayImage) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub proposal_count: usize,
    pub train_batch: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            proposal_count: PROPOSAL_COUNT,
            train_batch: DETECTOR_TRAIN_BATCH,
        }
    }
}

/// Test double that returns jittered ground truth scored by its IoU with the truth.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub ground_truth: BTreeMap<String, Vec<GroundTruth>>,
    pub jitter: f64,
    pub seed: u64,
    pub config: DetectorConfig,
}

impl OracleDetector {
    pub fn new(ground_truth: BTreeMap<String, Vec<GroundTruth>>, jitter: f64, seed: u64) -> Self {
        Self {
            ground_truth,
            jitter,
            seed,
            config: DetectorConfig::default(),
        }
    }
}

/// Perturbs every coordinate by `U(-jitter, jitter)`, clips to the image and scores by IoU.
pub fn oracle_detect(gt: &[GroundTruth], jitter: f64, bounds: (usize, usize), rng: &mut impl Rng) -> Vec<Detection> {
    let (w, h) = (bounds.0 as f64, bounds.1 as f64);
    gt.iter()
        .filter_map(|g| {
            let mut d = || if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
            let b = &g.bbox;
            let moved = BBox::new(b.x_min + d(), b.y_min + d(), b.x_max + d(), b.y_max + d());
            let bbox = moved.clip_to(w, h)?;
            Some(Detection {
                bbox,
                valve: g.valve,
                score: crate::metrics::iou(&bbox, &g.bbox).max(0.0),
            })
        })
        .collect()
}

impl DetectorBackend for OracleDetector {
    fn id(&self) -> &str {
        "oracle"
    }

    fn detect(&mut self, image_id: &str, img: &GrayImage, view: ViewClass) -> Result<Vec<Detection>> {
        let allowed = routing(view);
        let gt: Vec<GroundTruth> = self
            .ground_truth
            .get(image_id)
            .map(|v| v.iter().filter(|g| allowed.contains(&g.valve)).copied().collect())
            .unwrap_or_default();
        let mut rng = rng_for(self.seed, fnv1a(image_id.as_bytes()));
        Ok(oracle_detect(&gt, self.jitter, img.dims(), &mut rng))
    }
}

/// Replays stored detections keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct StubFileDetector {
    pub detections: BTreeMap<String, Vec<Detection>>,
}

impl StubFileDetector {
    pub fn from_records(text: &str) -> Result<Self> {
        let groups = crate::metrics::parse_detection_records(text)?;
        Ok(Self {
            detections: groups.into_iter().collect(),
        })
    }
}

impl DetectorBackend for StubFileDetector {
    fn id(&self) -> &str {
        "file"
    }

    fn detect(&mut self, image_id: &str, _img: &GrayImage, _view: ViewClass) -> Result<Vec<Detection>> {
        Ok(self.detections.get(image_id).cloned().unwrap_or_default())
    }
}

/// Trained network plus the mean image it was trained against.
pub struct NetClassifier {
    pub checkpoint: Checkpoint,
}

impl NetClassifier {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let s = checkpoint.net.spec;
        if s.classes > ViewClass::COUNT {
            return Err(Error::Config {
                field: "classes",
                reason: format!("{} exceeds the {} view classes", s.classes, ViewClass::COUNT),
            });
        }
        if checkpoint.mean.dims() != (s.input_size, s.input_size) {
            return Err(Error::Shape(format!(
                "mean image is {}x{}, network input is {2}x{2}",
                checkpoint.mean.width(),
                checkpoint.mean.height(),
                s.input_size
            )));
        }
        Ok(Self { checkpoint })
    }

    /// Resizes a Cartesian frame to the network input and removes the training mean.
    pub fn prepare(&self, img: &GrayImage) -> Result<GrayImage> {
        let n = self.checkpoint.net.spec.input_size;
        preprocess(&img.resize(n, n), &self.checkpoint.mean)
    }
}

impl ViewClassifier for NetClassifier {
    fn classify(&mut self, _image_id: &str, img: &GrayImage) -> Result<Vec<f64>> {
        let x = self.prepare(img)?;
        let t = Tensor::from_images(&[&x])?;
        let mut p = self.checkpoint.net.predict(&t)?.remove(0);
        p.resize(ViewClass::COUNT, 0.0);
        Ok(p)
    }
}

/// Returns a one-hot vector for known image ids.
#[derive(Debug, Clone, Default)]
pub struct TruthClassifier {
    pub views: BTreeMap<String, ViewClass>,
}

impl ViewClassifier for TruthClassifier {
    fn classify(&mut self, image_id: &str, _img: &GrayImage) -> Result<Vec<f64>> {
        let view = self
            .views
            .get(image_id)
            .ok_or_else(|| Error::Domain(format!("no known view for image `{image_id}`")))?;
        let mut p = vec![0.0; ViewClass::COUNT];
        p[view.index()] = 1.0;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    /// Scanner display raster with a sector to detect and resample.
    Display,
    /// Already scan-converted.
    Cartesian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub output_size: usize,
    pub nms_iou: f64,
    pub display_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_size: CARTESIAN_SIZE,
            nms_iou: DEFAULT_NMS_IOU,
            display_threshold: DISPLAY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub image_id: String,
    pub view: ViewClass,
    pub view_scores: Vec<f64>,
    /// Per-class best detection above the display threshold.
    pub detections: Vec<Detection>,
    /// Every routed detection after suppression, for evaluation.
    pub all_detections: Vec<Detection>,
    pub reason: Option<String>,
    pub backend: String,
    pub nms_iou: f64,
    pub display_threshold: f64,
}

/// Per class, the highest-scoring detection strictly above `threshold`
/// (earliest on ties), in valve order.
pub fn select_for_display(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut best: BTreeMap<ValveClass, Detection> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.score > threshold) {
        match best.get(&d.valve) {
            Some(b) if b.score >= d.score => {}
            _ => {
                best.insert(d.valve, *d);
            }
        }
    }
    best.into_values().collect()
}

pub fn run_frame(
    image_id: &str,
    img: &GrayImage,
    kind: FrameKind,
    classifier: &mut dyn ViewClassifier,
    detector: &mut dyn DetectorBackend,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let converted;
    let frame = match kind {
        FrameKind::Display => {
            converted = scan_convert(img, cfg.output_size, cfg.output_size)?;
            &converted
        }
        FrameKind::Cartesian => img,
    };
    let view_scores = classifier.classify(image_id, frame)?;
    let view = ViewClass::from_index(crate::nnet::argmax(&view_scores))
        .ok_or_else(|| Error::Shape("empty view score vector".into()))?;
    let mut result = PipelineResult {
        image_id: image_id.to_string(),
        view,
        view_scores,
        detections: Vec::new(),
        all_detections: Vec::new(),
        reason: None,
        backend: detector.id().to_string(),
        nms_iou: cfg.nms_iou,
        display_threshold: cfg.display_threshold,
    };
    let allowed = routing(view);
    if allowed.is_empty() {
        result.reason = Some(NO_DETECTOR_REASON.to_string());
        return Ok(result);
    }
    let raw = detector.detect(image_id, frame, view).map_err(|e| Error::Backend {
        backend: detector.id().to_string(),
        reason: e.to_string(),
    })?;
    let routed: Vec<Detection> = raw.into_iter().filter(|d| allowed.contains(&d.valve)).collect();
    result.all_detections = nms(&routed, cfg.nms_iou);
    result.detections = select_for_display(&result.all_detections, cfg.display_threshold);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub class: String,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Machine-readable form of a [`PipelineResult`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub image_id: String,
    pub view: String,
    pub view_scores: Vec<f64>,
    pub detections: Vec<DetectionRecord>,
    pub all_detections: Vec<DetectionRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub backend: String,
    pub nms_iou: f64,
    pub display_threshold: f64,
}

fn det_record(d: &Detection) -> DetectionRecord {
    DetectionRecord {
        class: d.valve.token().to_string(),
        bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
        score: d.score,
    }
}

impl PipelineResult {
    pub fn to_record(&self) -> ResultRecord {
        ResultRecord {
            image_id: self.image_id.clone(),
            view: self.view.token().to_string(),
            view_scores: self.view_scores.clone(),
            detections: self.detections.iter().map(det_record).collect(),
            all_detections: self.all_detections.iter().map(det_record).collect(),
            reason: self.reason.clone(),
            backend: self.backend.clone(),
            nms_iou: self.nms_iou,
            display_threshold: self.display_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlayColors {
    pub mv: [u8; 3],
    pub av: [u8; 3],
    pub tv: [u8; 3],
    pub lvot: [u8; 3],
}

impl Default for OverlayColors {
    fn default() -> Self {
        Self {
            mv: [0, 255, 0],
            av: [160, 32, 240],
            tv: [0, 255, 255],
            lvot: [255, 255, 0],
        }
    }
}

impl OverlayColors {
    pub fn of(&self, v: ValveClass) -> [u8; 3] {
        match v {
            ValveClass::MV => self.mv,
            ValveClass::AV => self.av,
            ValveClass::TV => self.tv,
            ValveClass::LVOT => self.lvot,
        }
    }
}

pub const BANNER_ROWS: usize = 7;
pub const BOX_THICKNESS: usize = 2;

/// 3x5 glyphs, one row per entry, most significant of the 3 bits on the left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        ':' => [0, 2, 0, 2, 0],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, x0: usize, y0: usize, text: &str, color: [u8; 3]) -> usize {
    let mut x = x0;
    for c in text.chars() {
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    let (px, py) = (x + col, y0 + row);
                    if px < img.width() && py < img.height() {
                        img.set(px, py, color);
                    }
                }
            }
        }
        x += 4;
    }
    x
}

/// Integer pixel extent `[x0, x1) x [y0, y1)` of a box, clipped to the raster.
fn pixel_extent(b: &BBox, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let clamp = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
    let (x0, x1) = (clamp(b.x_min, w), clamp(b.x_max, w));
    let (y0, y1) = (clamp(b.y_min, h), clamp(b.y_max, h));
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Perimeter pixels of a box drawn `BOX_THICKNESS` wide, inside the box.
pub fn box_perimeter(b: &BBox, w: usize, h: usize) -> Vec<(usize, usize)> {
    let Some((x0, y0, x1, y1)) = pixel_extent(b, w, h) else {
        return Vec::new();
    };
    let t = BOX_THICKNESS;
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if x < x0 + t || x + t >= x1 || y < y0 + t || y + t >= y1 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Boxes on a color copy of the frame, with a caption banner of view and scores.
pub fn render_overlay(img: &GrayImage, result: &PipelineResult, colors: &OverlayColors) -> RgbImage {
    let mut out = RgbImage::from_gray(img);
    let (w, h) = img.dims();
    for d in &result.detections {
        let c = colors.of(d.valve);
        for (x, y) in box_perimeter(&d.bbox, w, h) {
            if y >= BANNER_ROWS {
                out.set(x, y, c);
            }
        }
    }
    for y in 0..BANNER_ROWS.min(h) {
        for x in 0..w {
            out.set(x, y, [0, 0, 0]);
        }
    }
    let score = result.view_scores.get(result.view.index()).copied().unwrap_or(0.0);
    let mut x = draw_text(&mut out, 1, 1, &format!("{} {:.2}", result.view.token(), score), [255, 255, 255]);
    for d in &result.detections {
        x = draw_text(&mut out, x + 4, 1, &format!("{} {:.2}", d.valve.token(), d.score), colors.of(d.valve));
    }
    out
}

/// Table rows per valve class with ground truth, followed by an "All" row.
pub fn detection_report(images: &[ImageEval]) -> Result<EvalReport> {
    let mut rows: Vec<EvalRow> = Vec::new();
    for class in ValveClass::ALL {
        let subset: Vec<ImageEval> = images
            .iter()
            .filter(|i| i.ground_truth.iter().any(|g| g.valve == class))
            .map(|i| ImageEval {
                image_id: i.image_id.clone(),
                detections: i.detections.iter().filter(|d| d.valve == class).copied().collect(),
                ground_truth: i.ground_truth.iter().filter(|g| g.valve == class).copied().collect(),
            })
            .collect();
        if !subset.is_empty() {
            rows.push(map_eval(&subset, class.token())?);
        }
    }
    rows.push(map_eval(images, "All")?);
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueDomain;

    fn gt(v: ValveClass, x0: f64, y0: f64) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(x0, y0, x0 + 40.0, y0 + 56.0),
            valve: v,
        }
    }

    fn frame() -> GrayImage {
        GrayImage::filled(256, 256, 90.0, ValueDomain::Raw)
    }

    fn setup(view: ViewClass, boxes: Vec<GroundTruth>) -> (TruthClassifier, OracleDetector) {
        let mut c = TruthClassifier::default();
        c.views.insert("f".into(), view);
        let mut g = BTreeMap::new();
        g.insert("f".to_string(), boxes);
        (c, OracleDetector::new(g, 0.0, 1))
    }

    #[test]
    fn routing_is_total() {
        for v in ViewClass::ALL {
            let r = routing(v);
            assert_eq!(r.is_empty(), !v.is_apical());
        }
    }

    #[test]
    fn apical4_oracle_passthrough() {
        let boxes = vec![gt(ValveClass::MV, 150.0, 120.0), gt(ValveClass::TV, 50.0, 120.0)];
        let (mut c, mut d) = setup(ViewClass::Apical4, boxes.clone());
        let r = run_frame("f", &frame(), FrameKind::Cartesian, &mut c, &mut d, &PipelineConfig::default()).unwrap();
        assert_eq!(r.view, ViewClass::Apical4);
        assert_eq!(r.detections.len(), 2);
        for det in &r.detections {
            let g = boxes.iter().find(|g| g.valve == det.valve).unwrap();
            assert_eq!(det.bbox, g.bbox);
            assert_eq!(det.score, 1.0);
        }
    }

    #[test]
    fn non_apical_skips_detection() {
        let (mut c, mut d) = setup(ViewClass::Noise, vec![gt(ValveClass::MV, 10.0, 10.0)]);
        let r = run_frame("f", &frame(), FrameKind::Cartesian, &mut c, &mut d, &PipelineConfig::default()).unwrap();
        assert!(r.detections.is_empty() && r.all_detections.is_empty());
        assert_eq!(r.reason.as_deref(), Some(NO_DETECTOR_REASON));
    }

    #[test]
    fn routing_filters_foreign_classes() {
        let (mut c, mut d) = setup(ViewClass::Apical2, vec![gt(ValveClass::MV, 10.0, 10.0), gt(ValveClass::AV, 100.0, 100.0)]);
        let r = run_frame("f", &frame(), FrameKind::Cartesian, &mut c, &mut d, &PipelineConfig::default()).unwrap();
        assert!(r.all_detections.iter().all(|d| d.valve == ValveClass::MV));
    }

    #[test]
    fn per_class_max_above_threshold() {
        let mk = |x: f64, s: f64| Detection {
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
            valve: ValveClass::MV,
            score: s,
        };
        let dets = [mk(0.0, 0.9), mk(50.0, 0.6), mk(100.0, 0.4)];
        let kept = select_for_display(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        for t in [0.0, 0.3, 0.5, 0.7, 0.95] {
            assert!(select_for_display(&dets, t + 0.05).len() <= select_for_display(&dets, t).len());
        }
    }

    #[test]
    fn jitter_two_keeps_high_iou() {
        let g = vec![gt(ValveClass::MV, 100.0, 100.0)];
        for seed in 0..500 {
            let mut rng = rng_for(seed, 0);
            let d = oracle_detect(&g, 2.0, (256, 256), &mut rng);
            assert!(crate::metrics::iou(&d[0].bbox, &g[0].bbox) >= 0.8);
        }
        assert!(oracle_detect(&[], 2.0, (256, 256), &mut rng_for(0, 0)).is_empty());
    }

    #[test]
    fn overlay_recolors_only_perimeter() {
        let img = frame();
        let (mut c, mut d) = setup(ViewClass::Apical2, vec![gt(ValveClass::MV, 60.0, 60.0)]);
        let r = run_frame("f", &img, FrameKind::Cartesian, &mut c, &mut d, &PipelineConfig::default()).unwrap();
        let o = render_overlay(&img, &r, &OverlayColors::default());
        let base = RgbImage::from_gray(&img);
        let per: std::collections::BTreeSet<_> = box_perimeter(&r.detections[0].bbox, 256, 256).into_iter().collect();
        for y in BANNER_ROWS..256 {
            for x in 0..256 {
                let changed = o.get(x, y) != base.get(x, y);
                assert_eq!(changed, per.contains(&(x, y)), "({x},{y})");
            }
        }
    }

    #[test]
    fn empty_overlay_touches_banner_only() {
        let img = frame();
        let (mut c, mut d) = setup(ViewClass::Noise, vec![]);
        let r = run_frame("f", &img, FrameKind::Cartesian, &mut c, &mut d, &PipelineConfig::default()).unwrap();
        let o = render_overlay(&img, &r, &OverlayColors::default());
        let base = RgbImage::from_gray(&img);
        for y in BANNER_ROWS..256 {
            for x in 0..256 {
                assert_eq!(o.get(x, y), base.get(x, y));
            }
        }
    }

    #[test]
    fn report_rows() {
        let images = vec![ImageEval {
            image_id: "a".into(),
            detections: vec![Detection {
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                valve: ValveClass::MV,
                score: 0.9,
            }],
            ground_truth: vec![GroundTruth {
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                valve: ValveClass::MV,
            }],
        }];
        let rep = detection_report(&images).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].label, "MV");
        assert_eq!(rep.rows[1].map_50, 1.0);
    }
}
