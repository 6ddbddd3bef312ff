//! Clip manifests, timestamp-based patient grouping, patient-level splits and
//! per-heartbeat frame sampling.
//!
//! Manifest lines are `clip_id|timestamp|frame_rate|heartbeats|frame_count|view`
//! with ISO-8601 timestamps at one-second resolution; `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::{fnv1a, rng_for};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const DEFAULT_GAP_MINUTES: i64 = 30;
pub const FRAMES_PER_HEARTBEAT: usize = 10;
pub const MAX_FRAMES_PER_CLIP: usize = 30;
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.60, 0.20, 0.20);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum ViewClass {
    Apical2,
    Apical3,
    Apical4,
    Apical5,
    #[serde(rename = "PLAX")]
    Plax,
    #[serde(rename = "PLAX_RVIF")]
    PlaxRvif,
    #[serde(rename = "PLAX_RVOT")]
    PlaxRvot,
    #[serde(rename = "PSAX")]
    Psax,
    #[serde(rename = "PSAX_AoV")]
    PsaxAov,
    Subcostal4C,
    Noise,
}

impl ViewClass {
    pub const COUNT: usize = 11;
    pub const ALL: [ViewClass; 11] = [
        ViewClass::Apical2,
        ViewClass::Apical3,
        ViewClass::Apical4,
        ViewClass::Apical5,
        ViewClass::Plax,
        ViewClass::PlaxRvif,
        ViewClass::PlaxRvot,
        ViewClass::Psax,
        ViewClass::PsaxAov,
        ViewClass::Subcostal4C,
        ViewClass::Noise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Manifest token.
    pub fn token(self) -> &'static str {
        match self {
            ViewClass::Apical2 => "Apical2",
            ViewClass::Apical3 => "Apical3",
            ViewClass::Apical4 => "Apical4",
            ViewClass::Apical5 => "Apical5",
            ViewClass::Plax => "PLAX",
            ViewClass::PlaxRvif => "PLAX_RVIF",
            ViewClass::PlaxRvot => "PLAX_RVOT",
            ViewClass::Psax => "PSAX",
            ViewClass::PsaxAov => "PSAX_AoV",
            ViewClass::Subcostal4C => "Subcostal4C",
            ViewClass::Noise => "Noise",
        }
    }

    /// Human-readable label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ViewClass::Apical2 => "Apical 2",
            ViewClass::Apical3 => "Apical 3",
            ViewClass::Apical4 => "Apical 4",
            ViewClass::Apical5 => "Apical 5",
            ViewClass::Plax => "PLAX",
            ViewClass::PlaxRvif => "PLAX-RVIF",
            ViewClass::PlaxRvot => "PLAX-RVOT",
            ViewClass::Psax => "PSAX",
            ViewClass::PsaxAov => "PSAX-AoV",
            ViewClass::Subcostal4C => "Subcostal",
            ViewClass::Noise => "Noise",
        }
    }

    pub fn is_apical(self) -> bool {
        matches!(
            self,
            ViewClass::Apical2 | ViewClass::Apical3 | ViewClass::Apical4 | ViewClass::Apical5
        )
    }

    fn valid_tokens() -> String {
        Self::ALL.iter().map(|v| v.token()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ViewClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ViewClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.token() == s)
            .ok_or_else(|| Error::Enumeration {
                kind: "view",
                token: s.to_string(),
                valid: Self::valid_tokens(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipMeta {
    pub clip_id: String,
    pub acquired_at: NaiveDateTime,
    pub frame_rate: f64,
    pub heartbeats: usize,
    pub frame_count: usize,
    pub view: ViewClass,
}

impl ClipMeta {
    pub fn to_record(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.clip_id,
            self.acquired_at.format(TIMESTAMP_FORMAT),
            self.frame_rate,
            self.heartbeats,
            self.frame_count,
            self.view.token()
        )
    }
}

fn parse_field<T: FromStr>(line: usize, field: &'static str, raw: &str) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        field,
        reason: format!("cannot parse `{raw}`"),
    })
}

pub fn parse_manifest(text: &str) -> Result<Vec<ClipMeta>> {
    let mut out = Vec::new();
    for (n, raw_line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                field: "record",
                reason: format!("expected 6 pipe-delimited fields, found {}", fields.len()),
            });
        }
        let clip_id = fields[0].trim();
        if clip_id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                field: "clip_id",
                reason: "empty".into(),
            });
        }
        let acquired_at = NaiveDateTime::parse_from_str(fields[1].trim(), TIMESTAMP_FORMAT)
            .map_err(|e| Error::Parse {
                line: line_no,
                field: "timestamp",
                reason: format!("`{}`: {e}", fields[1]),
            })?;
        let frame_rate: f64 = parse_field(line_no, "frame_rate", fields[2])?;
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Parse {
                line: line_no,
                field: "frame_rate",
                reason: "must be positive".into(),
            });
        }
        let heartbeats: usize = parse_field(line_no, "heartbeats", fields[3])?;
        let frame_count: usize = parse_field(line_no, "frame_count", fields[4])?;
        if heartbeats < 1 {
            return Err(Error::Parse {
                line: line_no,
                field: "heartbeats",
                reason: "must be at least 1".into(),
            });
        }
        if frame_count < 1 {
            return Err(Error::Parse {
                line: line_no,
                field: "frame_count",
                reason: "must be at least 1".into(),
            });
        }
        let view: ViewClass = fields[5].trim().parse()?;
        out.push(ClipMeta {
            clip_id: clip_id.to_string(),
            acquired_at,
            frame_rate,
            heartbeats,
            frame_count,
            view,
        });
    }
    Ok(out)
}

pub fn write_manifest(clips: &[ClipMeta]) -> String {
    let mut s = String::from("# clip_id|acquired_at|frame_rate|heartbeats|frame_count|view\n");
    for c in clips {
        s.push_str(&c.to_record());
        s.push('\n');
    }
    s
}

pub type PatientId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientAssignment {
    /// Clip ids in acquisition order with their patient.
    pub ordered: Vec<(String, PatientId)>,
}

impl PatientAssignment {
    pub fn patient_of(&self, clip_id: &str) -> Option<PatientId> {
        self.ordered
            .iter()
            .find(|(c, _)| c == clip_id)
            .map(|&(_, p)| p)
    }

    pub fn patient_count(&self) -> usize {
        self.ordered.last().map_or(0, |&(_, p)| p as usize)
    }

    pub fn as_map(&self) -> BTreeMap<String, PatientId> {
        self.ordered.iter().cloned().collect()
    }
}

/// Groups clips into patients: sorted by acquisition time, a new patient starts
/// whenever the gap to the previous clip exceeds `gap_threshold` (strictly).
pub fn assign_patients(
    clips: &[ClipMeta],
    gap_threshold: chrono::Duration,
) -> Result<PatientAssignment> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no clips to group"));
    }
    let mut sorted: Vec<&ClipMeta> = clips.iter().collect();
    sorted.sort_by(|a, b| {
        a.acquired_at
            .cmp(&b.acquired_at)
            .then_with(|| a.clip_id.cmp(&b.clip_id))
    });
    let mut ordered = Vec::with_capacity(sorted.len());
    let mut patient: PatientId = 1;
    for (i, clip) in sorted.iter().enumerate() {
        if i > 0 && clip.acquired_at - sorted[i - 1].acquired_at > gap_threshold {
            patient += 1;
        }
        ordered.push((clip.clip_id.clone(), patient));
    }
    let mut ids: Vec<&str> = ordered.iter().map(|(c, _)| c.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("duplicate clip id `{}`", w[0])));
    }
    Ok(PatientAssignment { ordered })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Enumeration {
                kind: "split",
                token: s.to_string(),
                valid: "train, validation, test".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub by_patient: BTreeMap<PatientId, Split>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.by_patient.values().filter(|&&v| v == s).count();
        (
            count(Split::Train),
            count(Split::Validation),
            count(Split::Test),
        )
    }

    pub fn split_of(&self, patient: PatientId) -> Option<Split> {
        self.by_patient.get(&patient).copied()
    }

    /// `patient_id|split` records.
    pub fn to_records(&self) -> String {
        self.by_patient
            .iter()
            .map(|(p, s)| format!("{p}|{}\n", s.token()))
            .collect()
    }
}

/// Seeded shuffle of patient ids, cut at `round(N r_train)` and `round(N (r_train + r_val))`.
pub fn split_patients(
    pa: &PatientAssignment,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config {
            field: "ratios",
            reason: format!("({a}, {b}, {c}) must be positive and sum to 1"),
        });
    }
    let n = pa.patient_count();
    if n < 3 {
        return Err(Error::InsufficientPopulation { needed: 3, got: n });
    }
    let mut patients: Vec<PatientId> = (1..=n as PatientId).collect();
    let mut rng = rng_for(seed, 0x5917);
    patients.shuffle(&mut rng);
    let cut1 = (n as f64 * a).round() as usize;
    let cut2 = ((n as f64 * (a + b)).round() as usize).max(cut1);
    let by_patient = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = if i < cut1 {
                Split::Train
            } else if i < cut2 {
                Split::Validation
            } else {
                Split::Test
            };
            (p, s)
        })
        .collect();
    Ok(SplitAssignment { by_patient })
}

/// Up to ten distinct frames per heartbeat, at most thirty per clip, ascending.
///
/// Heartbeat spans divide `frame_count` evenly, with the last span absorbing the
/// remainder. When the cap bites, earlier heartbeats are kept.
pub fn sample_frames(clip: &ClipMeta, seed: u64) -> Result<Vec<usize>> {
    if clip.heartbeats < 1 || clip.frame_count < clip.heartbeats {
        return Err(Error::Domain(format!(
            "clip `{}`: frame_count {} must be at least heartbeats {}",
            clip.clip_id, clip.frame_count, clip.heartbeats
        )));
    }
    let mut rng = rng_for(seed, fnv1a(clip.clip_id.as_bytes()));
    let span = clip.frame_count / clip.heartbeats;
    let mut picked = Vec::with_capacity(MAX_FRAMES_PER_CLIP);
    for beat in 0..clip.heartbeats {
        let start = beat * span;
        let end = if beat + 1 == clip.heartbeats {
            clip.frame_count
        } else {
            start + span
        };
        let len = end - start;
        let k = FRAMES_PER_HEARTBEAT.min(len);
        let mut beat_pick: Vec<usize> = rand::seq::index::sample(&mut rng, len, k)
            .into_iter()
            .map(|i| start + i)
            .collect();
        beat_pick.sort_unstable();
        picked.extend(beat_pick);
        if picked.len() >= MAX_FRAMES_PER_CLIP {
            picked.truncate(MAX_FRAMES_PER_CLIP);
            break;
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// `clip_id|i,j,k` record.
pub fn frame_sample_record(clip_id: &str, frames: &[usize]) -> String {
    let list: Vec<String> = frames.iter().map(|f| f.to_string()).collect();
    format!("{clip_id}|{}", list.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, ts: &str) -> ClipMeta {
        ClipMeta {
            clip_id: id.into(),
            acquired_at: NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).unwrap(),
            frame_rate: 60.0,
            heartbeats: 2,
            frame_count: 120,
            view: ViewClass::Apical4,
        }
    }

    fn gap() -> chrono::Duration {
        chrono::Duration::minutes(DEFAULT_GAP_MINUTES)
    }

    #[test]
    fn parses_a_record() {
        let clips = parse_manifest("# header\nc1|2017-03-01T10:00:00|60|2|120|Apical4\n").unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0], clip("c1", "2017-03-01T10:00:00"));
        assert_eq!(parse_manifest(&write_manifest(&clips)).unwrap(), clips);
    }

    #[test]
    fn short_record_cites_line() {
        match parse_manifest("c1|2017-03-01T10:00:00|60|2|120") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_names_field() {
        match parse_manifest("c1|2017-03-01T10:00:00|60|two|120|Apical4") {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "heartbeats"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_view_lists_tokens() {
        match parse_manifest("c1|2017-03-01T10:00:00|60|2|120|A4C") {
            Err(Error::Enumeration { token, valid, .. }) => {
                assert_eq!(token, "A4C");
                assert!(valid.contains("Apical4") && valid.contains("PSAX_AoV"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn view_enum_has_eleven_members() {
        assert_eq!(ViewClass::ALL.len(), ViewClass::COUNT);
        for (i, v) in ViewClass::ALL.iter().enumerate() {
            assert_eq!(v.index(), i);
            assert_eq!(v.token().parse::<ViewClass>().unwrap(), *v);
        }
    }

    #[test]
    fn worked_patient_example() {
        let clips = [
            clip("a", "2017-03-01T10:00:00"),
            clip("b", "2017-03-01T10:10:00"),
            clip("c", "2017-03-01T11:00:00"),
        ];
        let pa = assign_patients(&clips, gap()).unwrap();
        let ids: Vec<_> = pa.ordered.iter().map(|&(_, p)| p).collect();
        assert_eq!(ids, [1, 1, 2]);
    }

    #[test]
    fn exact_threshold_gap_keeps_patient() {
        let clips = [
            clip("a", "2017-03-01T10:00:00"),
            clip("b", "2017-03-01T10:30:00"),
            clip("c", "2017-03-01T11:00:01"),
        ];
        let pa = assign_patients(&clips, gap()).unwrap();
        assert_eq!(pa.patient_of("b"), Some(1));
        assert_eq!(pa.patient_of("c"), Some(2));
        let single = assign_patients(&clips[..1], gap()).unwrap();
        assert_eq!(single.patient_count(), 1);
        assert!(matches!(assign_patients(&[], gap()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn duplicate_clip_ids_rejected() {
        let clips = [clip("a", "2017-03-01T10:00:00"), clip("a", "2017-03-01T12:00:00")];
        assert!(matches!(assign_patients(&clips, gap()), Err(Error::Domain(_))));
    }

    fn n_patients(n: usize) -> PatientAssignment {
        PatientAssignment {
            ordered: (1..=n).map(|p| (format!("c{p}"), p as PatientId)).collect(),
        }
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let s = split_patients(&n_patients(10), DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!(s.sizes(), (6, 2, 2));
        let s = split_patients(&n_patients(5), DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!(s.sizes(), (3, 1, 1));
        assert!(matches!(
            split_patients(&n_patients(2), DEFAULT_SPLIT_RATIOS, 1),
            Err(Error::InsufficientPopulation { got: 2, .. })
        ));
        assert!(matches!(
            split_patients(&n_patients(10), (0.5, 0.2, 0.2), 1),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = split_patients(&n_patients(40), DEFAULT_SPLIT_RATIOS, 7).unwrap();
        let b = split_patients(&n_patients(40), DEFAULT_SPLIT_RATIOS, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.by_patient.len(), 40);
    }

    #[test]
    fn frame_sampling_examples() {
        let mut c = clip("x", "2017-03-01T10:00:00");
        let f = sample_frames(&c, 3).unwrap();
        assert_eq!(f.len(), 20);
        assert_eq!(f.iter().filter(|&&i| i < 60).count(), 10);
        assert_eq!(f.iter().filter(|&&i| (60..120).contains(&i)).count(), 10);

        c.heartbeats = 5;
        c.frame_count = 300;
        let f = sample_frames(&c, 3).unwrap();
        assert_eq!(f.len(), 30);
        assert!(f.iter().all(|&i| i < 180), "earliest beats are kept");

        c.heartbeats = 1;
        c.frame_count = 8;
        assert_eq!(sample_frames(&c, 3).unwrap(), (0..8).collect::<Vec<_>>());

        c.heartbeats = 3;
        c.frame_count = 2;
        assert!(matches!(sample_frames(&c, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn remainder_frames_go_to_last_beat() {
        let mut c = clip("r", "2017-03-01T10:00:00");
        c.heartbeats = 2;
        c.frame_count = 25;
        let f = sample_frames(&c, 11).unwrap();
        assert_eq!(f.len(), 20);
        assert_eq!(f.iter().filter(|&&i| i < 12).count(), 10);
        assert!(f.iter().all(|&i| i < 25));
        assert_eq!(frame_sample_record("r", &[1, 5]), "r|1,5");
    }
}
