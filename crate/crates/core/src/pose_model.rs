//! Landmark data model and the PW1 line-delimited record codec.
//!
//! A PW1 record is a single-line JSON object:
//!
//! ```text
//! {"ts_ms":1700000000000,"landmarks":[[x,y,z,visibility], ... 33 entries],"image_b64":"AQI="}
//! ```
//!
//! Trace files are sequences of such lines. The first line may be a header
//! object such as `{"format":"PW1"}`, which readers accept and skip.

use std::collections::HashMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Number of landmarks in the pose topology.
pub const LANDMARK_COUNT: usize = 33;

/// Indices into the 33-point pose topology.
pub mod index {
    pub const NOSE: usize = 0;
    pub const LEFT_EAR: usize = 7;
    pub const RIGHT_EAR: usize = 8;
    pub const LEFT_SHOULDER: usize = 11;
    pub const RIGHT_SHOULDER: usize = 12;
    pub const LEFT_ELBOW: usize = 13;
    pub const RIGHT_ELBOW: usize = 14;
    pub const LEFT_WRIST: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
    pub const LEFT_HIP: usize = 23;
    pub const RIGHT_HIP: usize = 24;
    pub const LEFT_KNEE: usize = 25;
    pub const RIGHT_KNEE: usize = 26;
    pub const LEFT_ANKLE: usize = 27;
    pub const RIGHT_ANKLE: usize = 28;
    pub const LEFT_HEEL: usize = 29;
    pub const RIGHT_HEEL: usize = 30;
    pub const LEFT_FOOT_INDEX: usize = 31;
    pub const RIGHT_FOOT_INDEX: usize = 32;
}

/// Left/right pairs of the topology, (left, right). Index 0 (nose) is the
/// only unpaired point.
const MIRROR_PAIRS: [(usize, usize); 16] = [
    (1, 4),
    (2, 5),
    (3, 6),
    (7, 8),
    (9, 10),
    (11, 12),
    (13, 14),
    (15, 16),
    (17, 18),
    (19, 20),
    (21, 22),
    (23, 24),
    (25, 26),
    (27, 28),
    (29, 30),
    (31, 32),
];

/// Body side, from the user's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    fn pick(self, left: usize, right: usize) -> usize {
        match self {
            Side::Left => left,
            Side::Right => right,
        }
    }

    pub fn ear(self) -> usize {
        self.pick(index::LEFT_EAR, index::RIGHT_EAR)
    }
    pub fn shoulder(self) -> usize {
        self.pick(index::LEFT_SHOULDER, index::RIGHT_SHOULDER)
    }
    pub fn elbow(self) -> usize {
        self.pick(index::LEFT_ELBOW, index::RIGHT_ELBOW)
    }
    pub fn wrist(self) -> usize {
        self.pick(index::LEFT_WRIST, index::RIGHT_WRIST)
    }
    pub fn hip(self) -> usize {
        self.pick(index::LEFT_HIP, index::RIGHT_HIP)
    }
    pub fn knee(self) -> usize {
        self.pick(index::LEFT_KNEE, index::RIGHT_KNEE)
    }
    pub fn ankle(self) -> usize {
        self.pick(index::LEFT_ANKLE, index::RIGHT_ANKLE)
    }
    pub fn heel(self) -> usize {
        self.pick(index::LEFT_HEEL, index::RIGHT_HEEL)
    }
    pub fn foot_index(self) -> usize {
        self.pick(index::LEFT_FOOT_INDEX, index::RIGHT_FOOT_INDEX)
    }

    /// The eight body landmarks of this side that enter visibility averages:
    /// shoulder, elbow, wrist, hip, knee, ankle, heel, foot index.
    pub fn body_indices(self) -> [usize; 8] {
        [
            self.shoulder(),
            self.elbow(),
            self.wrist(),
            self.hip(),
            self.knee(),
            self.ankle(),
            self.heel(),
            self.foot_index(),
        ]
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// One detected keypoint. `x` and `y` are normalized image coordinates with
/// the origin at the top-left corner (y grows downward).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub visibility: f64,
}

impl Landmark {
    pub const fn new(x: f64, y: f64, z: f64, visibility: f64) -> Self {
        Self { x, y, z, visibility }
    }
}

/// A timestamped sample of all 33 landmarks, optionally carrying the
/// encoded still image it was detected on.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub ts_ms: i64,
    pub landmarks: [Landmark; LANDMARK_COUNT],
    pub image: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameErrorKind {
    WrongLandmarkCount,
    OutOfRangeField,
    NonFiniteField,
    NonMonotonicTimestamp,
    MalformedRecord,
}

impl FrameErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameErrorKind::WrongLandmarkCount => "wrong-landmark-count",
            FrameErrorKind::OutOfRangeField => "out-of-range-field",
            FrameErrorKind::NonFiniteField => "non-finite-field",
            FrameErrorKind::NonMonotonicTimestamp => "non-monotonic-timestamp",
            FrameErrorKind::MalformedRecord => "malformed-record",
        }
    }
}

impl fmt::Display for FrameErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct FrameValidationError {
    pub kind: FrameErrorKind,
    pub detail: String,
}

impl FrameValidationError {
    pub fn new(kind: FrameErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    fn malformed(detail: impl Into<String>) -> Self {
        Self::new(FrameErrorKind::MalformedRecord, detail)
    }
}

const FIELD_NAMES: [&str; 4] = ["x", "y", "z", "visibility"];

impl LandmarkFrame {
    /// Builds a frame from raw landmark values, applying ingest validation:
    /// non-finite values are rejected, visibility must lie in [0, 1], and
    /// x/y are clamped into [0, 1].
    pub fn new(
        ts_ms: i64,
        landmarks: &[Landmark],
        image: Option<Vec<u8>>,
    ) -> Result<Self, FrameValidationError> {
        if landmarks.len() != LANDMARK_COUNT {
            return Err(FrameValidationError::new(
                FrameErrorKind::WrongLandmarkCount,
                format!(
                    "expected {LANDMARK_COUNT} landmarks, got {}",
                    landmarks.len()
                ),
            ));
        }
        let mut out = [Landmark::default(); LANDMARK_COUNT];
        for (i, (lm, slot)) in landmarks.iter().zip(out.iter_mut()).enumerate() {
            let values = [lm.x, lm.y, lm.z, lm.visibility];
            for (name, v) in FIELD_NAMES.iter().zip(values) {
                if !v.is_finite() {
                    return Err(FrameValidationError::new(
                        FrameErrorKind::NonFiniteField,
                        format!("landmark {i} field {name} is not finite"),
                    ));
                }
            }
            if !(0.0..=1.0).contains(&lm.visibility) {
                return Err(FrameValidationError::new(
                    FrameErrorKind::OutOfRangeField,
                    format!(
                        "landmark {i} field visibility = {} outside [0, 1]",
                        lm.visibility
                    ),
                ));
            }
            *slot = Landmark {
                x: lm.x.clamp(0.0, 1.0),
                y: lm.y.clamp(0.0, 1.0),
                z: lm.z,
                visibility: lm.visibility,
            };
        }
        Ok(Self {
            ts_ms,
            landmarks: out,
            image,
        })
    }

    /// A frame with every landmark set to the same value. Mostly useful for
    /// tests and templates.
    pub fn uniform(ts_ms: i64, landmark: Landmark) -> Result<Self, FrameValidationError> {
        Self::new(ts_ms, &[landmark; LANDMARK_COUNT], None)
    }

    pub fn landmark(&self, idx: usize) -> &Landmark {
        &self.landmarks[idx]
    }
}

/// Returns true if the line is a trace header object (`{"format": ...}`).
pub fn is_header(line: &str) -> bool {
    serde_json::from_str::<HashMap<String, Value>>(line.trim())
        .map(|m| m.contains_key("format") && !m.contains_key("landmarks"))
        .unwrap_or(false)
}

fn number_at(value: &Value, what: impl Fn() -> String) -> Result<f64, FrameValidationError> {
    value
        .as_f64()
        .ok_or_else(|| FrameValidationError::malformed(format!("{} is not a number", what())))
}

/// Parses and validates one PW1 record.
pub fn parse_frame(record: &str) -> Result<LandmarkFrame, FrameValidationError> {
    let value: Value = serde_json::from_str(record.trim())
        .map_err(|e| FrameValidationError::malformed(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| FrameValidationError::malformed("record is not an object"))?;

    let ts_ms = obj
        .get("ts_ms")
        .ok_or_else(|| FrameValidationError::malformed("missing ts_ms"))?
        .as_i64()
        .ok_or_else(|| FrameValidationError::malformed("ts_ms is not an integer"))?;

    let raw = obj
        .get("landmarks")
        .ok_or_else(|| FrameValidationError::malformed("missing landmarks"))?
        .as_array()
        .ok_or_else(|| FrameValidationError::malformed("landmarks is not an array"))?;
    if raw.len() != LANDMARK_COUNT {
        return Err(FrameValidationError::new(
            FrameErrorKind::WrongLandmarkCount,
            format!("expected {LANDMARK_COUNT} landmarks, got {}", raw.len()),
        ));
    }

    let mut landmarks = Vec::with_capacity(LANDMARK_COUNT);
    for (i, entry) in raw.iter().enumerate() {
        let fields = entry
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| {
                FrameValidationError::malformed(format!("landmark {i} is not a 4-element array"))
            })?;
        let mut v = [0.0; 4];
        for (k, (slot, field)) in v.iter_mut().zip(fields).enumerate() {
            *slot = number_at(field, || format!("landmark {i} field {}", FIELD_NAMES[k]))?;
        }
        landmarks.push(Landmark::new(v[0], v[1], v[2], v[3]));
    }

    let image = match obj.get("image_b64") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            BASE64
                .decode(s)
                .map_err(|e| FrameValidationError::malformed(format!("image_b64: {e}")))?,
        ),
        Some(_) => return Err(FrameValidationError::malformed("image_b64 is not a string")),
    };

    LandmarkFrame::new(ts_ms, &landmarks, image)
}

#[derive(Serialize)]
struct WireRecord {
    ts_ms: i64,
    landmarks: Vec<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
}

/// Serializes a frame as a single PW1 line (no trailing newline).
pub fn serialize_frame(frame: &LandmarkFrame) -> String {
    let record = WireRecord {
        ts_ms: frame.ts_ms,
        landmarks: frame
            .landmarks
            .iter()
            .map(|l| [l.x, l.y, l.z, l.visibility])
            .collect(),
        image_b64: frame.image.as_ref().map(|b| BASE64.encode(b)),
    };
    serde_json::to_string(&record).expect("finite landmark values always serialize")
}

/// Reflects the frame horizontally: x becomes 1 - x and every left landmark
/// trades places with its right counterpart.
pub fn mirror_frame(frame: &LandmarkFrame) -> LandmarkFrame {
    let mut out = frame.clone();
    for lm in out.landmarks.iter_mut() {
        lm.x = 1.0 - lm.x;
    }
    for (l, r) in MIRROR_PAIRS {
        out.landmarks.swap(l, r);
    }
    out
}

/// Enforces strictly increasing timestamps for one source.
#[derive(Debug, Clone, Default)]
pub struct TimestampGuard {
    last: Option<i64>,
}

impl TimestampGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<i64> {
        self.last
    }

    /// Checks `ts_ms` against the last accepted timestamp without recording it.
    pub fn check(&self, ts_ms: i64) -> Result<(), FrameValidationError> {
        match self.last {
            Some(prev) if ts_ms <= prev => Err(FrameValidationError::new(
                FrameErrorKind::NonMonotonicTimestamp,
                format!("ts_ms {ts_ms} does not follow previous {prev}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn accept(&mut self, ts_ms: i64) -> Result<(), FrameValidationError> {
        self.check(ts_ms)?;
        self.last = Some(ts_ms);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_record(n: usize, ts: i64) -> String {
        let lms = vec!["[0.5,0.5,0.0,1.0]"; n].join(",");
        format!(r#"{{"ts_ms":{ts},"landmarks":[{lms}]}}"#)
    }

    #[test]
    fn parses_uniform_record() {
        let f = parse_frame(&uniform_record(33, 0)).unwrap();
        assert_eq!(f.ts_ms, 0);
        assert!(f
            .landmarks
            .iter()
            .all(|l| *l == Landmark::new(0.5, 0.5, 0.0, 1.0)));
        assert!(f.image.is_none());
    }

    #[test]
    fn rejects_32_landmarks() {
        let e = parse_frame(&uniform_record(32, 0)).unwrap_err();
        assert_eq!(e.kind, FrameErrorKind::WrongLandmarkCount);
    }

    #[test]
    fn rejects_visibility_out_of_range_naming_index() {
        let mut rows = vec!["[0.5,0.5,0.0,1.0]"; 33];
        rows[7] = "[0.5,0.5,0.0,1.5]";
        let rec = format!(r#"{{"ts_ms":3,"landmarks":[{}]}}"#, rows.join(","));
        let e = parse_frame(&rec).unwrap_err();
        assert_eq!(e.kind, FrameErrorKind::OutOfRangeField);
        assert!(e.detail.contains("landmark 7"), "{}", e.detail);
    }

    #[test]
    fn clamps_out_of_frame_coordinates() {
        let mut rows = vec!["[0.5,0.5,0.0,1.0]"; 33];
        rows[0] = "[-0.03,1.02,-4.0,0.2]";
        let rec = format!(r#"{{"ts_ms":3,"landmarks":[{}]}}"#, rows.join(","));
        let f = parse_frame(&rec).unwrap();
        assert_eq!(f.landmarks[0], Landmark::new(0.0, 1.0, -4.0, 0.2));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let lms = [Landmark::new(f64::NAN, 0.5, 0.0, 1.0); 33];
        let e = LandmarkFrame::new(0, &lms, None).unwrap_err();
        assert_eq!(e.kind, FrameErrorKind::NonFiniteField);
        let lms = [Landmark::new(0.5, 0.5, f64::INFINITY, 1.0); 33];
        let e = LandmarkFrame::new(0, &lms, None).unwrap_err();
        assert_eq!(e.kind, FrameErrorKind::NonFiniteField);
    }

    #[test]
    fn malformed_records() {
        for rec in [
            "",
            "not json",
            "[]",
            r#"{"landmarks":[]}"#,
            r#"{"ts_ms":1.5,"landmarks":[]}"#,
            r#"{"ts_ms":1,"landmarks":{}}"#,
            r#"{"ts_ms":1,"landmarks":[[0,0,0]]}"#,
            r#"{"format":"PW1"}"#,
        ] {
            let e = parse_frame(rec).unwrap_err();
            assert!(
                matches!(
                    e.kind,
                    FrameErrorKind::MalformedRecord | FrameErrorKind::WrongLandmarkCount
                ),
                "{rec}: {e}"
            );
        }
        let mut rows = vec!["[0.5,0.5,0.0,1.0]"; 33];
        rows[4] = r#"[0.5,"a",0.0,1.0]"#;
        let rec = format!(r#"{{"ts_ms":3,"landmarks":[{}]}}"#, rows.join(","));
        assert_eq!(
            parse_frame(&rec).unwrap_err().kind,
            FrameErrorKind::MalformedRecord
        );
    }

    #[test]
    fn image_bytes_encode_as_base64() {
        let mut f = LandmarkFrame::uniform(9, Landmark::new(0.5, 0.5, 0.0, 1.0)).unwrap();
        f.image = Some(vec![0x01, 0x02]);
        let rec = serialize_frame(&f);
        assert!(rec.contains(r#""image_b64":"AQI=""#), "{rec}");
        assert_eq!(parse_frame(&rec).unwrap(), f);
    }

    #[test]
    fn round_trip_keeps_precision() {
        let mut f = LandmarkFrame::uniform(1, Landmark::new(0.5, 0.5, 0.0, 1.0)).unwrap();
        f.landmarks[3].x = 0.123456789;
        let back = parse_frame(&serialize_frame(&f)).unwrap();
        assert!((back.landmarks[3].x - 0.123456789).abs() <= 1e-6);
        assert_eq!(back, f);
    }

    #[test]
    fn header_lines_are_detected() {
        assert!(is_header(r#"{"format":"PW1"}"#));
        assert!(is_header(r#"{"format":"PW1","label":"good_posture"}"#));
        assert!(!is_header(&uniform_record(33, 0)));
        assert!(!is_header("garbage"));
    }

    #[test]
    fn mirror_of_centered_frame_swaps_attributes() {
        let mut f = LandmarkFrame::uniform(0, Landmark::new(0.5, 0.5, 0.0, 1.0)).unwrap();
        f.landmarks[index::LEFT_KNEE].visibility = 0.3;
        let m = mirror_frame(&f);
        assert!(m.landmarks.iter().all(|l| l.x == 0.5));
        assert_eq!(m.landmarks[index::RIGHT_KNEE].visibility, 0.3);
        assert_eq!(m.landmarks[index::LEFT_KNEE].visibility, 1.0);
    }

    #[test]
    fn mirror_swaps_shoulders() {
        let mut f = LandmarkFrame::uniform(0, Landmark::new(0.5, 0.5, 0.0, 1.0)).unwrap();
        f.landmarks[11] = Landmark::new(0.2, 0.4, 0.0, 0.9);
        f.landmarks[12] = Landmark::new(0.8, 0.4, 0.0, 0.1);
        let m = mirror_frame(&f);
        assert!((m.landmarks[11].x - 0.2).abs() < 1e-12);
        assert_eq!(m.landmarks[11].visibility, 0.1);
        assert!((m.landmarks[12].x - 0.8).abs() < 1e-12);
        assert_eq!(m.landmarks[12].visibility, 0.9);
    }

    #[test]
    fn timestamp_guard_rejects_repeats() {
        let mut g = TimestampGuard::new();
        g.accept(10).unwrap();
        assert_eq!(
            g.accept(10).unwrap_err().kind,
            FrameErrorKind::NonMonotonicTimestamp
        );
        assert_eq!(
            g.accept(5).unwrap_err().kind,
            FrameErrorKind::NonMonotonicTimestamp
        );
        g.accept(11).unwrap();
        assert_eq!(g.last(), Some(11));
    }
}
