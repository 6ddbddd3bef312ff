//! Three-point valve annotations and the fixed-height boxes derived from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default box height at 256x256, tall enough to hold a fully open valve.
pub const DEFAULT_FIXED_HEIGHT: f64 = 56.0;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum ValveClass {
    MV,
    AV,
    TV,
    LVOT,
}

impl ValveClass {
    pub const ALL: [ValveClass; 4] = [ValveClass::MV, ValveClass::AV, ValveClass::TV, ValveClass::LVOT];

    pub fn token(self) -> &'static str {
        match self {
            ValveClass::MV => "MV",
            ValveClass::AV => "AV",
            ValveClass::TV => "TV",
            ValveClass::LVOT => "LVOT",
        }
    }
}

impl fmt::Display for ValveClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ValveClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.token() == s)
            .ok_or_else(|| Error::Enumeration {
                kind: "valve",
                token: s.to_string(),
                valid: "MV, AV, TV, LVOT".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box, half-open `[min, max)` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        b.is_valid().then_some(b)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Clips to `[0, w) x [0, h)`; `None` when nothing remains.
    pub fn clip_to(&self, w: f64, h: f64) -> Option<BBox> {
        self.intersection(&BBox::new(0.0, 0.0, w, h))
    }

    /// `x_min,y_min,x_max,y_max`
    pub fn to_field(&self) -> String {
        format!("{},{},{},{}", self.x_min, self.y_min, self.x_max, self.y_max)
    }

    pub fn parse_field(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad box `{s}`"))?;
        if v.len() != 4 {
            return Err(format!("box needs 4 coordinates, got {}", v.len()));
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]);
        if !b.is_valid() {
            return Err(format!("empty box `{s}`"));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValveAnnotation {
    pub clip_id: String,
    /// The fully-closed frame that was annotated.
    pub frame_index: usize,
    pub valve: ValveClass,
    pub left: Point,
    pub center: Point,
    pub right: Point,
}

impl ValveAnnotation {
    pub fn validate(&self, bounds: (usize, usize)) -> Result<()> {
        let (w, h) = (bounds.0 as f64, bounds.1 as f64);
        if !(self.left.x < self.right.x) {
            return Err(Error::Domain(format!(
                "{} annotation on `{}`: left.x {} must be below right.x {}",
                self.valve, self.clip_id, self.left.x, self.right.x
            )));
        }
        if !(self.center.x >= self.left.x && self.center.x <= self.right.x) {
            return Err(Error::Domain(format!(
                "{} annotation on `{}`: center.x {} outside [{}, {}]",
                self.valve, self.clip_id, self.center.x, self.left.x, self.right.x
            )));
        }
        for p in [self.left, self.center, self.right] {
            if !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) {
                return Err(Error::Domain(format!(
                    "{} annotation on `{}`: point ({}, {}) outside {}x{}",
                    self.valve, self.clip_id, p.x, p.y, bounds.0, bounds.1
                )));
            }
        }
        Ok(())
    }

    /// `clip_id|frame_index|valve|lx,ly|cx,cy|rx,ry`
    pub fn to_record(&self) -> String {
        format!(
            "{}|{}|{}|{},{}|{},{}|{},{}",
            self.clip_id,
            self.frame_index,
            self.valve,
            self.left.x,
            self.left.y,
            self.center.x,
            self.center.y,
            self.right.x,
            self.right.y
        )
    }
}

/// Box spanning `left.x..right.x`, `fixed_height` tall and centered on `center.y`,
/// clipped to `bounds`.
pub fn derive_bbox(a: &ValveAnnotation, fixed_height: f64, bounds: (usize, usize)) -> Result<BBox> {
    if !(fixed_height >= 2.0) {
        return Err(Error::Config {
            field: "fixed_height",
            reason: format!("{fixed_height} is below 2 px"),
        });
    }
    a.validate(bounds)?;
    let half = fixed_height / 2.0;
    let raw = BBox::new(a.left.x, a.center.y - half, a.right.x, a.center.y + half);
    raw.clip_to(bounds.0 as f64, bounds.1 as f64)
        .ok_or_else(|| Error::Domain("clipped box is empty".into()))
}

/// Same box on every listed frame of the clip.
pub fn propagate(derived: BBox, clip_frames: &[usize]) -> BTreeMap<usize, BBox> {
    clip_frames.iter().map(|&f| (f, derived)).collect()
}

pub fn parse_annotations(text: &str) -> Result<Vec<ValveAnnotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                field: "record",
                reason: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let frame_index = f[1].trim().parse::<usize>().map_err(|_| Error::Parse {
            line: line_no,
            field: "frame_index",
            reason: format!("not an index: `{}`", f[1]),
        })?;
        let valve: ValveClass = f[2].trim().parse()?;
        let point = |field: &'static str, s: &str| -> Result<Point> {
            let (x, y) = s.split_once(',').ok_or(Error::Parse {
                line: line_no,
                field,
                reason: format!("expected x,y, found `{s}`"),
            })?;
            let num = |t: &str| {
                t.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    field,
                    reason: format!("not a number: `{t}`"),
                })
            };
            Ok(Point::new(num(x)?, num(y)?))
        };
        out.push(ValveAnnotation {
            clip_id: f[0].trim().to_string(),
            frame_index,
            valve,
            left: point("left", f[3])?,
            center: point("center", f[4])?,
            right: point("right", f[5])?,
        });
    }
    Ok(out)
}

pub fn write_annotations(anns: &[ValveAnnotation]) -> String {
    let mut s = String::from("# clip_id|frame_index|valve|lx,ly|cx,cy|rx,ry\n");
    for a in anns {
        s.push_str(&a.to_record());
        s.push('\n');
    }
    s
}

/// `clip_id|frame|valve|x_min,y_min,x_max,y_max`
pub fn ground_truth_record(clip_id: &str, frame: usize, valve: ValveClass, b: &BBox) -> String {
    format!("{clip_id}|{frame}|{valve}|{}", b.to_field())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ann(l: (f64, f64), c: (f64, f64), r: (f64, f64)) -> ValveAnnotation {
        ValveAnnotation {
            clip_id: "c1".into(),
            frame_index: 7,
            valve: ValveClass::MV,
            left: Point::new(l.0, l.1),
            center: Point::new(c.0, c.1),
            right: Point::new(r.0, r.1),
        }
    }

    #[test]
    fn worked_box() {
        let b = derive_bbox(&ann((40., 100.), (60., 102.), (80., 104.)), 30.0, (256, 256)).unwrap();
        assert_eq!(b, BBox::new(40., 87., 80., 117.));
    }

    #[test]
    fn top_clipping() {
        let b = derive_bbox(&ann((40., 6.), (60., 5.), (80., 4.)), 30.0, (256, 256)).unwrap();
        assert_eq!(b, BBox::new(40., 0., 80., 20.));
    }

    #[test]
    fn zero_width_is_domain_error() {
        let a = ann((60., 100.), (60., 100.), (60., 100.));
        assert!(matches!(derive_bbox(&a, 30.0, (256, 256)), Err(Error::Domain(_))));
        let outside = ann((40., 100.), (60., 300.), (80., 100.));
        assert!(matches!(derive_bbox(&outside, 30.0, (256, 256)), Err(Error::Domain(_))));
        let ok = ann((40., 100.), (60., 100.), (80., 100.));
        assert!(matches!(derive_bbox(&ok, 1.0, (256, 256)), Err(Error::Config { .. })));
    }

    #[test]
    fn propagation() {
        let a = ann((40., 100.), (60., 102.), (80., 104.));
        let b = derive_bbox(&a, DEFAULT_FIXED_HEIGHT, (256, 256)).unwrap();
        let frames: Vec<usize> = (0..30).collect();
        let m = propagate(b, &frames);
        assert_eq!(m.len(), 30);
        assert!(m.values().all(|&x| x == b));
        assert_eq!(m[&a.frame_index], b);
        assert!(propagate(b, &[]).is_empty());
    }

    #[test]
    fn annotation_records_round_trip() {
        let a = ann((40.5, 100.), (60., 102.25), (80., 104.));
        let parsed = parse_annotations(&write_annotations(std::slice::from_ref(&a))).unwrap();
        assert_eq!(parsed, vec![a]);
        assert_eq!(
            ground_truth_record("c1", 3, ValveClass::TV, &BBox::new(1., 2., 3., 4.)),
            "c1|3|TV|1,2,3,4"
        );
    }

    proptest! {
        #[test]
        fn translation_equivariant(
            lx in 40.0..60.0f64, w in 5.0..40.0f64, cy in 60.0..120.0f64,
            dx in -30.0..30.0f64, dy in -30.0..30.0f64,
        ) {
            let a = ann((lx, cy - 3.0), (lx + w / 2.0, cy), (lx + w, cy + 2.0));
            let shifted = ann((lx + dx, cy - 3.0 + dy), (lx + w / 2.0 + dx, cy + dy), (lx + w + dx, cy + 2.0 + dy));
            let b0 = derive_bbox(&a, 30.0, (256, 256)).unwrap();
            let b1 = derive_bbox(&shifted, 30.0, (256, 256)).unwrap();
            let t = b0.translate(dx, dy);
            prop_assert!((b1.x_min - t.x_min).abs() < 1e-9 && (b1.y_min - t.y_min).abs() < 1e-9);
            prop_assert!((b1.x_max - t.x_max).abs() < 1e-9 && (b1.y_max - t.y_max).abs() < 1e-9);
            prop_assert!((b0.width() - w).abs() < 1e-9);
        }
    }
}
