//! Box overlap, non-maximum suppression, detection matching and COCO-style
//! precision/recall summaries, plus classification confusion matrices.
//!
//! AP follows the MS-COCO protocol: per class and IoU threshold, detections of
//! all images are ranked by score, the precision envelope is sampled at the 101
//! recall points `0.00, 0.01, ..., 1.00`, and recall is taken with at most 100
//! detections per image. Classes without ground truth are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::annotate::{BBox, ValveClass};
use crate::datasetio::ViewClass;
use crate::error::{Error, Result};

pub const DEFAULT_NMS_IOU: f64 = 0.6;
pub const MAX_DETECTIONS_PER_IMAGE: usize = 100;
pub const RECALL_POINTS: usize = 101;

/// IoU sweep `0.50, 0.55, ..., 0.95`, each value an exact quotient.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (10 + i) as f64 / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub valve: ValveClass,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub valve: ValveClass,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Indices sorted by descending score; ties keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    idx
}

/// Greedy per-class suppression of detections overlapping a higher-scored one
/// by more than `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let d = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.valve == d.valve && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Index into the ground-truth list.
    Matched(usize),
    FalsePositive,
}

/// One-to-one greedy matching for a single image; the result is indexed like `dets`.
///
/// Detections are visited by descending score and take the unmatched
/// same-class ground truth of highest IoU at or above the threshold (lowest
/// index on IoU ties).
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> Vec<MatchOutcome> {
    let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
    let mut taken = vec![false; gts.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.valve != d.valve {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[i] = MatchOutcome::Matched(g);
        }
    }
    out
}

/// COCO 101-point interpolated AP over `(score, is_true_positive)` results.
///
/// `None` when the class has no ground truth.
pub fn average_precision(results: &[(f64, bool)], n_ground_truth: usize) -> Option<f64> {
    if n_ground_truth == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].0.total_cmp(&results[a].0));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if results[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_ground_truth as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // right-to-left running maximum gives the interpolated envelope
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        while cursor < recall.len() && recall[cursor] < r {
            cursor += 1;
        }
        if cursor < recall.len() {
            sum += precision[cursor];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalRow {
    pub label: String,
    pub n_test_images: usize,
    pub map_50_95: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub mar_50_95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const TABLE_HEADINGS: [&str; 6] = [
    "Class",
    "# test images",
    "mAP (IoU:0.50:0.95)",
    "mAP (IoU:0.50)",
    "mAP (IoU:0.75)",
    "mAR (IoU:0.50:0.95)",
];

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", TABLE_HEADINGS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(TABLE_HEADINGS.len()));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |",
                r.label, r.n_test_images, r.map_50_95, r.map_50, r.map_75, r.mar_50_95
            );
        }
        s
    }
}

/// Per-class AP and recall at each IoU threshold; classes without ground truth are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCurves {
    pub thresholds: Vec<f64>,
    pub ap: BTreeMap<ValveClass, Vec<f64>>,
    pub recall: BTreeMap<ValveClass, Vec<f64>>,
    /// Classes that had detections but no ground truth.
    pub skipped: Vec<ValveClass>,
}

pub fn evaluate_curves(images: &[ImageEval], thresholds: &[f64]) -> ClassCurves {
    let mut gt_classes: BTreeMap<ValveClass, usize> = BTreeMap::new();
    let mut det_classes: BTreeSet<ValveClass> = BTreeSet::new();
    for img in images {
        for g in &img.ground_truth {
            *gt_classes.entry(g.valve).or_default() += 1;
        }
        det_classes.extend(img.detections.iter().map(|d| d.valve));
    }
    let mut ap = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for (&class, &n_gt) in &gt_classes {
        let mut ap_row = Vec::with_capacity(thresholds.len());
        let mut rec_row = Vec::with_capacity(thresholds.len());
        for &t in thresholds {
            let mut results: Vec<(f64, bool)> = Vec::new();
            for img in images {
                let mut dets: Vec<Detection> = img
                    .detections
                    .iter()
                    .filter(|d| d.valve == class)
                    .copied()
                    .collect();
                let order = score_order(&dets);
                dets = order.into_iter().map(|i| dets[i]).collect();
                dets.truncate(MAX_DETECTIONS_PER_IMAGE);
                let gts: Vec<GroundTruth> = img
                    .ground_truth
                    .iter()
                    .filter(|g| g.valve == class)
                    .copied()
                    .collect();
                let m = match_detections(&dets, &gts, t);
                results.extend(
                    dets.iter()
                        .zip(m)
                        .map(|(d, o)| (d.score, matches!(o, MatchOutcome::Matched(_)))),
                );
            }
            let tp = results.iter().filter(|r| r.1).count();
            ap_row.push(average_precision(&results, n_gt).unwrap_or(0.0));
            rec_row.push(tp as f64 / n_gt as f64);
        }
        ap.insert(class, ap_row);
        recall.insert(class, rec_row);
    }
    let skipped = det_classes
        .into_iter()
        .filter(|c| !gt_classes.contains_key(c))
        .collect();
    ClassCurves {
        thresholds: thresholds.to_vec(),
        ap,
        recall,
        skipped,
    }
}

fn mean_over(curves: &BTreeMap<ValveClass, Vec<f64>>, pick: impl Fn(&[f64]) -> f64) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    curves.values().map(|v| pick(v)).sum::<f64>() / curves.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One Table-1-style row over a set of images.
pub fn map_eval(images: &[ImageEval], label: &str) -> Result<EvalRow> {
    if images.iter().all(|i| i.ground_truth.is_empty()) {
        return Err(Error::Evaluation("no ground-truth boxes to evaluate".into()));
    }
    let thr = coco_iou_thresholds();
    let curves = evaluate_curves(images, &thr);
    // thresholds 0.50 and 0.75 sit at indices 0 and 5 of the sweep
    Ok(EvalRow {
        label: label.to_string(),
        n_test_images: images.len(),
        map_50_95: mean_over(&curves.ap, mean),
        map_50: mean_over(&curves.ap, |v| v[0]),
        map_75: mean_over(&curves.ap, |v| v[5]),
        mar_50_95: mean_over(&curves.recall, mean),
    })
}

/// `image_id|class|x_min,y_min,x_max,y_max|score`
pub fn detection_record(image_id: &str, d: &Detection) -> String {
    format!("{image_id}|{}|{}|{}", d.valve, d.bbox.to_field(), d.score)
}

/// Parses interchange records, grouped by image id in first-seen order.
pub fn parse_detection_records(text: &str) -> Result<Vec<(String, Vec<Detection>)>> {
    let mut groups: Vec<(String, Vec<Detection>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                field: "record",
                reason: format!("expected 4 fields, found {}", f.len()),
            });
        }
        let valve: ValveClass = f[1].trim().parse()?;
        let bbox = BBox::parse_field(f[2]).map_err(|reason| Error::Parse {
            line: line_no,
            field: "bbox",
            reason,
        })?;
        let score: f64 = f[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            field: "score",
            reason: format!("not a number: `{}`", f[3]),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Parse {
                line: line_no,
                field: "score",
                reason: format!("{score} outside [0, 1]"),
            });
        }
        let id = f[0].trim().to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            groups.push((id, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(Detection { bbox, valve, score });
    }
    Ok(groups)
}

/// Pairs detections with ground truth; the image set is the ground-truth image set.
pub fn join_images(
    detections: &[(String, Vec<Detection>)],
    ground_truth: &[(String, Vec<Detection>)],
) -> Vec<ImageEval> {
    let dets: BTreeMap<&str, &Vec<Detection>> =
        detections.iter().map(|(k, v)| (k.as_str(), v)).collect();
    ground_truth
        .iter()
        .map(|(id, gts)| ImageEval {
            image_id: id.clone(),
            detections: dets.get(id.as_str()).map(|v| v.to_vec()).unwrap_or_default(),
            ground_truth: gts
                .iter()
                .map(|g| GroundTruth {
                    bbox: g.bbox,
                    valve: g.valve,
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(preds: &[(ViewClass, ViewClass)]) -> ConfusionMatrix {
    let k = ViewClass::COUNT;
    let mut counts = vec![vec![0u64; k]; k];
    for &(t, p) in preds {
        counts[t.index()][p.index()] += 1;
    }
    ConfusionMatrix { counts }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedConfusion {
    pub rows: Vec<Vec<f64>>,
    /// Classes with no samples; their rows stay zero.
    pub empty_rows: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn normalize(&self) -> NormalizedConfusion {
        let mut empty_rows = Vec::new();
        let rows = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s: u64 = r.iter().sum();
                if s == 0 {
                    empty_rows.push(i);
                    vec![0.0; r.len()]
                } else {
                    r.iter().map(|&c| c as f64 / s as f64).collect()
                }
            })
            .collect();
        NormalizedConfusion { rows, empty_rows }
    }

    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let norm = self.normalize();
        let header: Vec<&str> = ViewClass::ALL.iter().map(|v| v.token()).collect();
        let _ = writeln!(s, "confusion matrix (rows = true, columns = predicted)");
        let _ = writeln!(s, "true\\pred|{}", header.join("|"));
        for (i, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}|{}", header[i], cells.join("|"));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "normalized by images per class");
        let _ = writeln!(s, "true\\pred|{}", header.join("|"));
        for (i, row) in norm.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:.3}")).collect();
            let _ = writeln!(s, "{}|{}", header[i], cells.join("|"));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "overall accuracy: {:.3}", self.overall_accuracy());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(b: (f64, f64, f64, f64), v: ValveClass, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(b.0, b.1, b.2, b.3),
            valve: v,
            score,
        }
    }

    fn gt(b: (f64, f64, f64, f64), v: ValveClass) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(b.0, b.1, b.2, b.3),
            valve: v,
        }
    }

    /// Pixel-count IoU for integer boxes on a small grid.
    fn pixel_iou(a: &BBox, b: &BBox, w: i32, h: i32) -> f64 {
        let inside = |bx: &BBox, x: i32, y: i32| {
            (x as f64) >= bx.x_min && (x as f64) < bx.x_max && (y as f64) >= bx.y_min && (y as f64) < bx.y_max
        };
        let (mut i, mut u) = (0, 0);
        for y in 0..h {
            for x in 0..w {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                i += (ia && ib) as i32;
                u += (ia || ib) as i32;
            }
        }
        i as f64 / u as f64
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0., 0., 10., 10.);
        let b = BBox::new(5., 0., 15., 10.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20., 20., 30., 30.)), 0.0);
        let oracle = pixel_iou(&a, &b, 20, 10);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn nms_examples() {
        use ValveClass::*;
        // IoU((0,0,10,10),(0,0,10,7)) = 0.7
        let pair = [det((0., 0., 10., 10.), MV, 0.9), det((0., 0., 10., 7.), MV, 0.8)];
        assert!((iou(&pair[0].bbox, &pair[1].bbox) - 0.7).abs() < 1e-12);
        assert_eq!(nms(&pair, 0.6), vec![pair[0]]);
        // IoU 0.3
        let low = [det((0., 0., 10., 10.), MV, 0.8), det((0., 0., 10., 3.), MV, 0.9)];
        let kept = nms(&low, 0.6);
        assert_eq!(kept, vec![low[1], low[0]]);
        let cross = [det((0., 0., 10., 10.), MV, 0.9), det((0., 0., 10., 10.), TV, 0.8)];
        assert_eq!(nms(&cross, 0.6).len(), 2);
    }

    #[test]
    fn nms_tie_keeps_earlier_input() {
        let a = det((0., 0., 10., 10.), ValveClass::MV, 0.5);
        let b = det((1., 0., 11., 10.), ValveClass::MV, 0.5);
        assert_eq!(nms(&[a, b], 0.6), vec![a]);
        assert_eq!(nms(&[b, a], 0.6), vec![b]);
    }

    #[test]
    fn matching_examples() {
        use ValveClass::*;
        let g = [gt((0., 0., 10., 10.), MV)];
        let d = [det((0., 0., 10., 8.), MV, 0.9)];
        assert_eq!(match_detections(&d, &g, 0.5), vec![MatchOutcome::Matched(0)]);
        let two = [det((0., 0., 10., 8.), MV, 0.7), det((0., 0., 10., 9.), MV, 0.9)];
        assert_eq!(
            match_detections(&two, &g, 0.5),
            vec![MatchOutcome::FalsePositive, MatchOutcome::Matched(0)]
        );
        let wrong_class = [det((0., 0., 10., 10.), TV, 0.9)];
        assert_eq!(
            match_detections(&wrong_class, &g, 0.5),
            vec![MatchOutcome::FalsePositive]
        );
    }

    /// Enumerates every one-to-one assignment compatible with the greedy rule:
    /// visiting detections by rank, each must take the best free candidate.
    fn greedy_oracle(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<MatchOutcome> {
        fn rec(
            order: &[usize],
            dets: &[Detection],
            gts: &[GroundTruth],
            thr: f64,
            taken: &mut Vec<bool>,
            cur: &mut Vec<MatchOutcome>,
            found: &mut Vec<Vec<MatchOutcome>>,
        ) {
            let Some((&i, rest)) = order.split_first() else {
                found.push(cur.clone());
                return;
            };
            let free: Vec<(usize, f64)> = gts
                .iter()
                .enumerate()
                .filter(|(g, gt)| !taken[*g] && gt.valve == dets[i].valve)
                .map(|(g, gt)| (g, iou(&dets[i].bbox, &gt.bbox)))
                .filter(|&(_, v)| v >= thr)
                .collect();
            let options: Vec<Option<usize>> = std::iter::once(None)
                .chain(free.iter().map(|&(g, _)| Some(g)))
                .collect();
            for opt in options {
                let admissible = match opt {
                    None => free.is_empty(),
                    Some(g) => {
                        let v = iou(&dets[i].bbox, &gts[g].bbox);
                        free.iter().all(|&(h, w)| w < v || (w == v && h >= g))
                    }
                };
                if !admissible {
                    continue;
                }
                if let Some(g) = opt {
                    taken[g] = true;
                    cur[i] = MatchOutcome::Matched(g);
                }
                rec(rest, dets, gts, thr, taken, cur, found);
                if let Some(g) = opt {
                    taken[g] = false;
                    cur[i] = MatchOutcome::FalsePositive;
                }
            }
        }
        let order = score_order(dets);
        let mut found = Vec::new();
        rec(
            &order,
            dets,
            gts,
            thr,
            &mut vec![false; gts.len()],
            &mut vec![MatchOutcome::FalsePositive; dets.len()],
            &mut found,
        );
        assert_eq!(found.len(), 1, "greedy rule must admit exactly one assignment");
        found.pop().unwrap()
    }

    proptest! {
        #[test]
        fn matching_equals_exhaustive_oracle(
            raw in prop::collection::vec((0u8..8, 0u8..8, 2u8..8, 2u8..8, 0u8..100), 5),
        ) {
            let boxes: Vec<BBox> = raw.iter()
                .map(|&(x, y, w, h, _)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
                .collect();
            let dets: Vec<Detection> = (0..3)
                .map(|i| Detection { bbox: boxes[i], valve: ValveClass::MV, score: raw[i].4 as f64 / 100.0 })
                .collect();
            let gts: Vec<GroundTruth> = (3..5)
                .map(|i| GroundTruth { bbox: boxes[i], valve: ValveClass::MV })
                .collect();
            prop_assert_eq!(match_detections(&dets, &gts, 0.3), greedy_oracle(&dets, &gts, 0.3));
        }

        #[test]
        fn iou_symmetric_and_bounded(a in (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64),
                                     b in (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64)) {
            let ba = BBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
            let bb = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
            let v = iou(&ba, &bb);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&bb, &ba));
            prop_assert!((iou(&ba, &ba) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_idempotent(raw in prop::collection::vec((0u8..20, 0u8..20, 3u8..12, 3u8..12, 0u8..100, 0u8..2), 0..12)) {
            let dets: Vec<Detection> = raw.iter().map(|&(x, y, w, h, s, c)| Detection {
                bbox: BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64),
                valve: if c == 0 { ValveClass::MV } else { ValveClass::TV },
                score: s as f64 / 100.0,
            }).collect();
            let once = nms(&dets, 0.5);
            prop_assert_eq!(nms(&once, 0.5), once.clone());
            prop_assert!(once.windows(2).all(|w| w[0].score >= w[1].score));
        }

        #[test]
        fn ap_monotone_under_extreme_additions(
            raw in prop::collection::vec((1u8..99, any::<bool>()), 1..10), extra_gt in 0usize..3,
        ) {
            let results: Vec<(f64, bool)> = raw.iter().map(|&(s, t)| (s as f64 / 100.0, t)).collect();
            let tps = results.iter().filter(|r| r.1).count();
            let n_gt = tps + extra_gt + 1;
            let base = average_precision(&results, n_gt).unwrap();
            let mut with_tp = results.clone();
            with_tp.push((1.0, true));
            prop_assert!(average_precision(&with_tp, n_gt).unwrap() >= base - 1e-12);
            let mut with_fp = results.clone();
            with_fp.push((0.0, false));
            prop_assert!(average_precision(&with_fp, n_gt).unwrap() <= base + 1e-12);
        }
    }

    #[test]
    fn ap_trivial_cases() {
        assert_eq!(average_precision(&[(0.9, true)], 1), Some(1.0));
        assert_eq!(average_precision(&[(0.9, false)], 1), Some(0.0));
        assert_eq!(average_precision(&[(0.9, true)], 0), None);
    }

    #[test]
    fn ap_three_point_curve() {
        // operating points (recall, precision): (1/2, 1), (1/2, 1/2), (1, 2/3)
        let points = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        let mut expect = 0.0;
        for k in 0..=100 {
            let r = k as f64 / 100.0;
            expect += points
                .iter()
                .filter(|p| p.0 >= r)
                .map(|p| p.1)
                .fold(0.0, f64::max);
        }
        expect /= 101.0;
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
        assert!((ap - expect).abs() < 1e-12);
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    fn single_image(d: Vec<Detection>, g: Vec<GroundTruth>) -> Vec<ImageEval> {
        vec![ImageEval {
            image_id: "i".into(),
            detections: d,
            ground_truth: g,
        }]
    }

    #[test]
    fn map_eval_examples() {
        use ValveClass::*;
        let g = vec![gt((0., 0., 10., 10.), MV), gt((20., 0., 30., 10.), TV)];
        let perfect: Vec<Detection> = g
            .iter()
            .map(|x| Detection { bbox: x.bbox, valve: x.valve, score: 1.0 })
            .collect();
        let r = map_eval(&single_image(perfect, g.clone()), "x").unwrap();
        assert_eq!((r.map_50_95, r.map_50, r.map_75, r.mar_50_95), (1.0, 1.0, 1.0, 1.0));

        // IoU exactly 0.8 is matched at 0.50..=0.80, seven of ten thresholds
        let one = single_image(vec![det((0., 0., 10., 8.), MV, 0.7)], vec![gt((0., 0., 10., 10.), MV)]);
        let r = map_eval(&one, "x").unwrap();
        assert_eq!(r.map_50, 1.0);
        assert!((r.map_50_95 - 0.7).abs() < 1e-15);
        assert!((r.mar_50_95 - 0.7).abs() < 1e-15);

        let none = map_eval(&single_image(vec![], g), "x").unwrap();
        assert_eq!((none.map_50_95, none.mar_50_95), (0.0, 0.0));

        assert!(matches!(
            map_eval(&single_image(vec![det((0., 0., 1., 1.), MV, 1.0)], vec![]), "x"),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn classes_without_ground_truth_are_skipped() {
        use ValveClass::*;
        let imgs = single_image(
            vec![det((0., 0., 10., 10.), MV, 0.9), det((50., 50., 60., 60.), AV, 0.9)],
            vec![gt((0., 0., 10., 10.), MV)],
        );
        let c = evaluate_curves(&imgs, &coco_iou_thresholds());
        assert_eq!(c.skipped, vec![AV]);
        assert_eq!(map_eval(&imgs, "x").unwrap().map_50_95, 1.0);
    }

    #[test]
    fn report_headings() {
        let rep = EvalReport {
            rows: vec![EvalRow {
                label: "Apical 4".into(),
                n_test_images: 5303,
                map_50_95: 0.343,
                map_50: 0.896,
                map_75: 0.146,
                mar_50_95: 0.528,
            }],
        };
        let text = rep.render();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            "| Class | # test images | mAP (IoU:0.50:0.95) | mAP (IoU:0.50) | mAP (IoU:0.75) | mAR (IoU:0.50:0.95) |"
        );
        assert!(text.contains("| Apical 4 | 5303 | 0.343 | 0.896 | 0.146 | 0.528 |"));
    }

    #[test]
    fn detection_records_round_trip() {
        let d = det((1.5, 2., 30., 40.), ValveClass::LVOT, 0.25);
        let text = format!("{}\n{}\n", detection_record("a/1", &d), detection_record("b/2", &d));
        let parsed = parse_detection_records(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], ("a/1".to_string(), vec![d]));
        assert!(parse_detection_records("a|MV|1,2,3|0.5").is_err());
        assert!(parse_detection_records("a|MV|1,2,3,4|1.5").is_err());
    }

    #[test]
    fn confusion_examples() {
        use ViewClass::*;
        let all_right = [(Apical2, Apical2), (Apical4, Apical4), (Noise, Noise)];
        let cm = confusion(&all_right);
        assert_eq!(cm.overall_accuracy(), 1.0);
        for i in 0..11 {
            for j in 0..11 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        let wrong = confusion(&[(Apical4, Apical5)]);
        assert_eq!(wrong.counts[Apical4.index()][Apical5.index()], 1);
        assert_eq!(wrong.overall_accuracy(), 0.0);
        let norm = wrong.normalize();
        assert_eq!(norm.rows[Apical4.index()].iter().sum::<f64>(), 1.0);
        assert_eq!(norm.empty_rows.len(), 10);
    }

    #[test]
    fn accuracy_matches_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200);
        let preds: Vec<(ViewClass, ViewClass)> = (0..200)
            .map(|_| {
                let t = ViewClass::ALL[rng.gen_range(0..11)];
                let p = if rng.gen_bool(0.7) { t } else { ViewClass::ALL[rng.gen_range(0..11)] };
                (t, p)
            })
            .collect();
        let cm = confusion(&preds);
        let hits = preds.iter().filter(|(t, p)| t == p).count();
        assert_eq!(cm.overall_accuracy(), hits as f64 / 200.0);
        assert_eq!(cm.row_sums().iter().sum::<u64>(), 200);
        for row in cm.normalize().rows.iter().filter(|r| r.iter().any(|&v| v > 0.0)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
