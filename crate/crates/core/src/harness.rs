//! Evaluation tooling: synthetic seated skeletons, visibility degradation,
//! trace replay against labels and accuracy reports.
//!
//! Synthetic traces are drawn from a 2-D seated template that faces +x with
//! the left side nearest the camera. Right-hand perspectives are produced by
//! mirroring, so both halves of the perspective space share one geometry.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::perspective::{Perspective, PerspectiveConfig, PerspectiveSmoother};
use crate::pose_model::{
    is_header, mirror_frame, parse_frame, serialize_frame, Landmark, LandmarkFrame, Side, TimestampGuard,
    LANDMARK_COUNT,
};
use crate::rules::{assess, Overall, PostureAssessment, RuleId, RuleThresholds, Verdict};
use crate::temporal::{DebounceConfig, Debouncer};

pub const TRACE_FORMAT: &str = "PW1";
pub const REPORT_FORMAT: &str = "PW1-report";
pub const TRACE_FRAMES: usize = 120;
pub const FRAME_INTERVAL_MS: i64 = 100;
pub const TRACE_BASE_TS_MS: i64 = 1_700_000_000_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace header: {0}")]
    Header(String),
    #[error("trace line {line}: {detail}")]
    Frame { line: usize, detail: String },
    #[error("report line {line}: {detail}")]
    Report { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    GoodPosture,
    LeanForward,
    CrossedLegs,
    LegsOnChair,
}

impl Posture {
    pub const ALL: [Posture; 4] = [
        Posture::GoodPosture,
        Posture::CrossedLegs,
        Posture::LeanForward,
        Posture::LegsOnChair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Posture::GoodPosture => "good_posture",
            Posture::LeanForward => "lean_forward",
            Posture::CrossedLegs => "crossed_legs",
            Posture::LegsOnChair => "legs_on_chair",
        }
    }

    /// The rule whose violation defines this posture, if any.
    pub fn defining_rule(self) -> Option<RuleId> {
        match self {
            Posture::GoodPosture => None,
            Posture::LeanForward => Some(RuleId::BackAngle),
            Posture::CrossedLegs => Some(RuleId::LegCrossed),
            Posture::LegsOnChair => Some(RuleId::FeetAboveHips),
        }
    }

    pub fn for_rule(rule: RuleId) -> Option<Posture> {
        match rule {
            RuleId::BackAngle => Some(Posture::LeanForward),
            RuleId::LegCrossed => Some(Posture::CrossedLegs),
            RuleId::FeetAboveHips => Some(Posture::LegsOnChair),
            RuleId::KneeAngle | RuleId::HeadPosition => None,
        }
    }
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Posture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Posture::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown posture {s:?}"))
    }
}

/// A replay verdict for a whole trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicted {
    GoodPosture,
    LeanForward,
    CrossedLegs,
    LegsOnChair,
    /// The most frequent violation comes from a rule with no posture of its own.
    Other,
    /// No frame produced a violation and good frames were not a majority.
    Unknown,
}

impl From<Posture> for Predicted {
    fn from(p: Posture) -> Self {
        match p {
            Posture::GoodPosture => Predicted::GoodPosture,
            Posture::LeanForward => Predicted::LeanForward,
            Posture::CrossedLegs => Predicted::CrossedLegs,
            Posture::LegsOnChair => Predicted::LegsOnChair,
        }
    }
}

impl Predicted {
    pub fn as_str(self) -> &'static str {
        match self {
            Predicted::GoodPosture => "good_posture",
            Predicted::LeanForward => "lean_forward",
            Predicted::CrossedLegs => "crossed_legs",
            Predicted::LegsOnChair => "legs_on_chair",
            Predicted::Other => "other",
            Predicted::Unknown => "unknown",
        }
    }

    pub fn is_bad_posture(self) -> bool {
        matches!(
            self,
            Predicted::LeanForward | Predicted::CrossedLegs | Predicted::LegsOnChair
        )
    }
}

impl fmt::Display for Predicted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationLevel {
    VeryDim,
    Dim,
    Normal,
    Bright,
    VeryBright,
}

impl DegradationLevel {
    pub const ALL: [DegradationLevel; 5] = [
        DegradationLevel::VeryDim,
        DegradationLevel::Dim,
        DegradationLevel::Normal,
        DegradationLevel::Bright,
        DegradationLevel::VeryBright,
    ];

    /// Visibility scale `s` and coordinate jitter `sigma`.
    pub fn params(self) -> DegradeParams {
        let (scale, sigma) = match self {
            DegradationLevel::VeryDim => (0.55, 0.010),
            DegradationLevel::Dim => (0.75, 0.006),
            DegradationLevel::Normal => (1.00, 0.003),
            DegradationLevel::Bright => (0.90, 0.004),
            DegradationLevel::VeryBright => (0.70, 0.008),
        };
        DegradeParams { scale, sigma }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DegradationLevel::VeryDim => "very_dim",
            DegradationLevel::Dim => "dim",
            DegradationLevel::Normal => "normal",
            DegradationLevel::Bright => "bright",
            DegradationLevel::VeryBright => "very_bright",
        }
    }
}

impl fmt::Display for DegradationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DegradationLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown degradation level {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeParams {
    pub scale: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub trace: Vec<LandmarkFrame>,
    pub label: Posture,
    pub declared_perspective: Perspective,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    format: String,
    label: Posture,
    perspective: Perspective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl LabeledTrace {
    /// PW1 text: a header line naming the label and perspective, then one
    /// frame per line.
    pub fn to_pw1(&self, seed: Option<u64>) -> String {
        let header = TraceHeader {
            format: TRACE_FORMAT.into(),
            label: self.label,
            perspective: self.declared_perspective,
            seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for f in &self.trace {
            out.push_str(&serialize_frame(f));
            out.push('\n');
        }
        out
    }

    pub fn from_pw1(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(HarnessError::EmptyTrace)?;
        if !is_header(first) {
            return Err(HarnessError::Header("first line must be a PW1 header".into()));
        }
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| HarnessError::Header(e.to_string()))?;
        if header.format != TRACE_FORMAT {
            return Err(HarnessError::Header(format!("unexpected format {:?}", header.format)));
        }
        let mut guard = TimestampGuard::new();
        let mut trace = Vec::new();
        for (i, line) in lines {
            let frame = parse_frame(line)
                .and_then(|f| guard.accept(f.ts_ms).map(|_| f))
                .map_err(|e| HarnessError::Frame {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            trace.push(frame);
        }
        if trace.is_empty() {
            return Err(HarnessError::EmptyTrace);
        }
        Ok(LabeledTrace {
            trace,
            label: header.label,
            declared_perspective: header.perspective,
        })
    }
}

/// Geometry of one seated skeleton in the canonical frame (facing +x, left
/// side nearest the camera). Angles are in degrees; y grows downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeatedPose {
    pub hip: (f64, f64),
    pub thigh_len: f64,
    /// Thigh slope below horizontal; negative raises the knee above the hip.
    pub thigh_deg: f64,
    pub torso_len: f64,
    /// Knee-hip-shoulder angle.
    pub back_deg: f64,
    pub neck_len: f64,
    /// Ear-over-shoulder lean from vertical, towards the facing direction.
    pub head_deg: f64,
    pub shin_len: f64,
    /// Hip-knee-ankle angle.
    pub knee_deg: f64,
    /// Absolute far-side ankle position, used to cross that leg.
    pub far_ankle: Option<(f64, f64)>,
    /// Offset from each near-side landmark to its far-side counterpart.
    pub far_offset: (f64, f64),
}

impl SeatedPose {
    pub fn for_posture(posture: Posture) -> Self {
        let base = SeatedPose {
            hip: (0.45, 0.60),
            thigh_len: 0.22,
            thigh_deg: 12.0,
            torso_len: 0.28,
            back_deg: 92.0,
            neck_len: 0.14,
            head_deg: 5.0,
            shin_len: 0.24,
            knee_deg: 95.0,
            far_ankle: None,
            far_offset: (0.015, -0.008),
        };
        match posture {
            Posture::GoodPosture => base,
            Posture::LeanForward => SeatedPose {
                back_deg: 55.0,
                head_deg: 12.0,
                ..base
            },
            Posture::CrossedLegs => {
                let knee = base.knee();
                SeatedPose {
                    far_ankle: Some((knee.0 - 0.065, knee.1 - 0.034)),
                    ..base
                }
            }
            Posture::LegsOnChair => SeatedPose {
                thigh_deg: -15.0,
                back_deg: 90.0,
                shin_len: 0.20,
                knee_deg: 159.0,
                ..base
            },
        }
    }

    fn knee(&self) -> (f64, f64) {
        let t = self.thigh_deg.to_radians();
        (self.hip.0 + self.thigh_len * t.cos(), self.hip.1 + self.thigh_len * t.sin())
    }

    /// Near-side keypoints as (shoulder, elbow, wrist, hip, knee, ankle, heel,
    /// foot_index, ear).
    fn near_points(&self) -> [(f64, f64); 9] {
        let hip = self.hip;
        let knee = self.knee();
        let torso_dir = (self.thigh_deg - self.back_deg).to_radians();
        let shoulder = (
            hip.0 + self.torso_len * torso_dir.cos(),
            hip.1 + self.torso_len * torso_dir.sin(),
        );
        let h = self.head_deg.to_radians();
        let ear = (shoulder.0 + self.neck_len * h.sin(), shoulder.1 - self.neck_len * h.cos());
        let to_hip = (hip.1 - knee.1).atan2(hip.0 - knee.0);
        let shin_dir = to_hip - self.knee_deg.to_radians();
        let ankle = (
            knee.0 + self.shin_len * shin_dir.cos(),
            knee.1 + self.shin_len * shin_dir.sin(),
        );
        let elbow = (shoulder.0 + 0.03, shoulder.1 + 0.15);
        let wrist = (elbow.0 + 0.12, elbow.1 - 0.01);
        let heel = (ankle.0 - 0.02, ankle.1 + 0.02);
        let foot = (ankle.0 + 0.06, ankle.1 + 0.025);
        [shoulder, elbow, wrist, hip, knee, ankle, heel, foot, ear]
    }

    /// Renders all 33 landmarks. `near_vis` and `far_vis` are the visibilities
    /// of the left (near) and right (far) sides.
    pub fn render(&self, ts_ms: i64, near_vis: f64, far_vis: f64) -> LandmarkFrame {
        let mut lms = [Landmark::default(); LANDMARK_COUNT];
        let near = self.near_points();
        let (dx, dy) = self.far_offset;
        let far_of = |p: (f64, f64)| (p.0 + dx, p.1 + dy);

        let body = |side: Side| {
            let s = side;
            [
                s.shoulder(),
                s.elbow(),
                s.wrist(),
                s.hip(),
                s.knee(),
                s.ankle(),
                s.heel(),
                s.foot_index(),
                s.ear(),
            ]
        };
        let put = |lms: &mut [Landmark; LANDMARK_COUNT], i: usize, p: (f64, f64), v: f64| {
            lms[i] = Landmark::new(p.0, p.1, 0.0, v);
        };
        for (k, &i) in body(Side::Left).iter().enumerate() {
            put(&mut lms, i, near[k], near_vis);
        }
        for (k, &i) in body(Side::Right).iter().enumerate() {
            put(&mut lms, i, far_of(near[k]), far_vis);
        }
        if let Some(a) = self.far_ankle {
            let r = Side::Right;
            put(&mut lms, r.ankle(), a, far_vis);
            put(&mut lms, r.heel(), (a.0 - 0.02, a.1 + 0.02), far_vis);
            put(&mut lms, r.foot_index(), (a.0 + 0.06, a.1 + 0.025), far_vis);
        }

        let ear = near[8];
        let wrist = near[2];
        // Face: nose, eyes (inner, centre, outer), mouth corners.
        put(&mut lms, 0, (ear.0 + 0.045, ear.1 + 0.015), near_vis);
        for (k, i) in [1usize, 2, 3].into_iter().enumerate() {
            let p = (ear.0 + 0.03 - 0.005 * k as f64, ear.1 - 0.015);
            put(&mut lms, i, p, near_vis);
            put(&mut lms, i + 3, far_of(p), far_vis);
        }
        put(&mut lms, 9, (ear.0 + 0.035, ear.1 + 0.035), near_vis);
        put(&mut lms, 10, far_of((ear.0 + 0.035, ear.1 + 0.035)), far_vis);
        // Hands: pinky, index, thumb.
        for (k, i) in [17usize, 19, 21].into_iter().enumerate() {
            let p = (wrist.0 + 0.02, wrist.1 + 0.005 * k as f64);
            put(&mut lms, i, p, near_vis);
            put(&mut lms, i + 1, far_of(p), far_vis);
        }
        LandmarkFrame::new(ts_ms, &lms, None).expect("template coordinates lie inside the image")
    }
}

fn far_visibility(p: Perspective) -> f64 {
    if p.is_diagonal() {
        0.80
    } else {
        0.60
    }
}

const NEAR_VISIBILITY: f64 = 0.96;

/// A deterministic 120-frame trace at 10 fps for one posture and viewpoint.
pub fn generate_synthetic(label: Posture, perspective: Perspective, seed: u64) -> LabeledTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = SeatedPose::for_posture(label);
    let left_view = matches!(perspective, Perspective::Left | Perspective::LeftDiagonal);
    let far_vis = far_visibility(perspective);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let trace = (0..TRACE_FRAMES)
        .map(|i| {
            let t = i as f64 / 40.0 * std::f64::consts::TAU + phase;
            let moved = SeatedPose {
                hip: (pose.hip.0 + 0.004 * t.sin(), pose.hip.1 + 0.003 * t.cos()),
                far_ankle: pose
                    .far_ankle
                    .map(|(x, y)| (x + 0.004 * t.sin(), y + 0.003 * t.cos())),
                ..pose
            };
            let near = NEAR_VISIBILITY + rng.random_range(-0.02..=0.02);
            let far = far_vis + rng.random_range(-0.02..=0.02);
            let mut frame = moved.render(TRACE_BASE_TS_MS + i as i64 * FRAME_INTERVAL_MS, near, far);
            for lm in frame.landmarks.iter_mut() {
                lm.x += rng.random_range(-0.001..=0.001);
                lm.y += rng.random_range(-0.001..=0.001);
            }
            if left_view {
                frame
            } else {
                mirror_frame(&frame)
            }
        })
        .collect();
    LabeledTrace {
        trace,
        label,
        declared_perspective: perspective,
    }
}

/// Scales visibilities by `s` and jitters x, y by N(0, sigma), clamping into
/// [0, 1]. The noise draws do not depend on `params`, so two calls with the
/// same seed differ only by the parameters applied.
pub fn degrade_with(trace: &LabeledTrace, params: DegradeParams, seed: u64) -> LabeledTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = trace.clone();
    for frame in out.trace.iter_mut() {
        for lm in frame.landmarks.iter_mut() {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            lm.x = (lm.x + params.sigma * nx).clamp(0.0, 1.0);
            lm.y = (lm.y + params.sigma * ny).clamp(0.0, 1.0);
            lm.visibility = (lm.visibility * params.scale).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn degrade(trace: &LabeledTrace, level: DegradationLevel, seed: u64) -> LabeledTrace {
    degrade_with(trace, level.params(), seed)
}

/// Forces both knees and ankles down to visibility 0.2, the way a table
/// hides the lower body.
pub fn occlude_table(trace: &LabeledTrace) -> LabeledTrace {
    let mut out = trace.clone();
    for frame in out.trace.iter_mut() {
        for side in [Side::Left, Side::Right] {
            frame.landmarks[side.knee()].visibility = 0.2;
            frame.landmarks[side.ankle()].visibility = 0.2;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub thresholds: RuleThresholds,
    pub perspective: PerspectiveConfig,
    pub debounce: DebounceConfig,
}

/// Per-trace replay statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub predicted: Predicted,
    pub frames: usize,
    pub good_frames: usize,
    pub bad_by_rule: BTreeMap<RuleId, usize>,
    pub indeterminate_by_rule: BTreeMap<RuleId, usize>,
    pub fires: usize,
    pub incidents: usize,
}

impl TraceOutcome {
    /// Indeterminate findings summed over rules and frames.
    pub fn indeterminate(&self) -> usize {
        self.indeterminate_by_rule.values().sum()
    }
}

/// Trace label from per-frame assessments: good on a strict majority of good
/// frames, else the posture of the most frequent bad rule (ties go to rule
/// order). A winning rule without a posture gives [`Predicted::Other`].
pub fn predict_label(assessments: &[PostureAssessment]) -> Predicted {
    let good = assessments.iter().filter(|a| a.overall == Overall::Good).count();
    if 2 * good > assessments.len() {
        return Predicted::GoodPosture;
    }
    let mut counts = BTreeMap::<RuleId, usize>::new();
    for f in assessments.iter().flat_map(|a| a.bad_findings()) {
        *counts.entry(f.rule).or_default() += 1;
    }
    let best = counts.iter().max_by_key(|&(&r, &n)| (n, std::cmp::Reverse(r)));
    match best {
        None => Predicted::Unknown,
        Some((&r, _)) => Posture::for_rule(r).map_or(Predicted::Other, Predicted::from),
    }
}

/// Runs smoothing, rules and the debouncer over one trace.
pub fn replay_trace(trace: &LabeledTrace, config: &ReplayConfig) -> Result<TraceOutcome, HarnessError> {
    if trace.trace.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let mut smoother = PerspectiveSmoother::new(config.perspective);
    let mut debouncer = Debouncer::new(config.debounce);
    let mut assessments = Vec::with_capacity(trace.trace.len());
    let mut fires = 0;
    for (i, frame) in trace.trace.iter().enumerate() {
        let perspective = smoother.push(frame);
        let a = assess(frame, perspective, &config.thresholds);
        let decision = debouncer.update(&a).map_err(|e| HarnessError::Frame {
            line: i + 1,
            detail: e.to_string(),
        })?;
        fires += decision.fire as usize;
        assessments.push(a);
    }

    let mut bad_by_rule = BTreeMap::new();
    let mut indeterminate_by_rule = BTreeMap::new();
    for f in assessments.iter().flat_map(|a| a.findings.iter()) {
        match f.verdict {
            Verdict::Bad => *bad_by_rule.entry(f.rule).or_default() += 1,
            Verdict::Indeterminate => *indeterminate_by_rule.entry(f.rule).or_default() += 1,
            Verdict::Ok => {}
        }
    }
    Ok(TraceOutcome {
        predicted: predict_label(&assessments),
        frames: assessments.len(),
        good_frames: assessments.iter().filter(|a| a.overall == Overall::Good).count(),
        bad_by_rule,
        indeterminate_by_rule,
        fires,
        incidents: debouncer.incidents().len(),
    })
}

/// One trace to evaluate, with the degradation already applied (if any).
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub trace: LabeledTrace,
    pub level: Option<DegradationLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub posture: Posture,
    pub perspective: Perspective,
    pub level: Option<DegradationLevel>,
    pub predicted: Predicted,
    #[serde(rename = "match")]
    pub matched: bool,
    pub indeterminate: usize,
    pub frames: usize,
    pub fires: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureAccuracy {
    pub posture: Posture,
    pub matches: usize,
    pub cells: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine {
    Cell(Cell),
    Accuracy(PostureAccuracy),
}

impl EvaluationReport {
    /// Accuracy per posture row, in [`Posture::ALL`] order, skipping postures
    /// without cells.
    pub fn accuracy(&self) -> Vec<PostureAccuracy> {
        Posture::ALL
            .into_iter()
            .filter_map(|posture| {
                let row: Vec<&Cell> = self.cells.iter().filter(|c| c.posture == posture).collect();
                if row.is_empty() {
                    return None;
                }
                let matches = row.iter().filter(|c| c.matched).count();
                Some(PostureAccuracy {
                    posture,
                    matches,
                    cells: row.len(),
                    accuracy: matches as f64 / row.len() as f64,
                })
            })
            .collect()
    }

    pub fn matches(&self) -> usize {
        self.cells.iter().filter(|c| c.matched).count()
    }

    pub fn to_pw1(&self) -> String {
        let mut out = format!("{{\"format\":\"{REPORT_FORMAT}\"}}\n");
        let lines = self
            .cells
            .iter()
            .cloned()
            .map(ReportLine::Cell)
            .chain(self.accuracy().into_iter().map(ReportLine::Accuracy));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("report lines serialize"));
            out.push('\n');
        }
        out
    }

    /// Reads cells back; accuracy lines are recomputed rather than trusted.
    pub fn from_pw1(text: &str) -> Result<(Self, Vec<PostureAccuracy>), HarnessError> {
        let mut report = EvaluationReport::default();
        let mut stored = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && is_header(line)) {
                continue;
            }
            let parsed: ReportLine = serde_json::from_str(line).map_err(|e| HarnessError::Report {
                line: i + 1,
                detail: e.to_string(),
            })?;
            match parsed {
                ReportLine::Cell(c) => report.cells.push(c),
                ReportLine::Accuracy(a) => stored.push(a),
            }
        }
        Ok((report, stored))
    }

    /// A posture-by-perspective grid of matches, one block per level.
    pub fn grid(&self) -> String {
        let mut levels: Vec<Option<DegradationLevel>> = Vec::new();
        for c in &self.cells {
            if !levels.contains(&c.level) {
                levels.push(c.level);
            }
        }
        let mut out = String::new();
        for level in levels {
            let cells: Vec<&Cell> = self.cells.iter().filter(|c| c.level == level).collect();
            let name = level.map_or("clean", |l| l.as_str());
            let _ = writeln!(out, "[{name}]");
            let _ = write!(out, "{:<15}", "posture");
            for p in Perspective::ALL {
                let _ = write!(out, "{:>16}", p.as_str());
            }
            let _ = writeln!(out, "{:>10}", "accuracy");
            for posture in Posture::ALL {
                let row: Vec<&&Cell> = cells.iter().filter(|c| c.posture == posture).collect();
                if row.is_empty() {
                    continue;
                }
                let _ = write!(out, "{:<15}", posture.as_str());
                for p in Perspective::ALL {
                    let mark = match row.iter().find(|c| c.perspective == p) {
                        Some(c) if c.matched => "✓".to_string(),
                        Some(c) => format!("✗ {}", c.predicted),
                        None => "-".to_string(),
                    };
                    let _ = write!(out, "{mark:>16}");
                }
                let matched = row.iter().filter(|c| c.matched).count();
                let _ = writeln!(out, "{:>9.0}%", 100.0 * matched as f64 / row.len() as f64);
            }
            out.push('\n');
        }
        let total = self.cells.len();
        let _ = writeln!(out, "overall: {}/{} cells match", self.matches(), total);
        out
    }
}

fn cell_for(case: &EvalCase, config: &ReplayConfig) -> Result<Cell, HarnessError> {
    let outcome = replay_trace(&case.trace, config)?;
    Ok(Cell {
        posture: case.trace.label,
        perspective: case.trace.declared_perspective,
        level: case.level,
        predicted: outcome.predicted,
        matched: outcome.predicted == Predicted::from(case.trace.label),
        indeterminate: outcome.indeterminate(),
        frames: outcome.frames,
        fires: outcome.fires,
    })
}

/// Replays every case, in parallel when enabled. Cell order follows `cases`.
pub fn replay(cases: &[EvalCase], config: &ReplayConfig) -> Result<EvaluationReport, HarnessError> {
    let cells = par::map(cases, |c| cell_for(c, config));
    Ok(EvaluationReport {
        cells: cells.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Single-threaded [`replay`], kept for comparison.
pub fn replay_sequential(cases: &[EvalCase], config: &ReplayConfig) -> Result<EvaluationReport, HarnessError> {
    let cells = par::map_sequential(cases, |c| cell_for(c, config));
    Ok(EvaluationReport {
        cells: cells.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Seed for degrading trace `trace_idx` at `level`.
pub fn degrade_seed(seed: u64, trace_idx: usize, level: DegradationLevel) -> u64 {
    seed ^ ((trace_idx as u64) << 8) ^ level as u64
}

/// Expands traces into cases: unchanged when `levels` is empty, otherwise
/// one degraded copy per level.
pub fn sweep_cases(traces: &[LabeledTrace], levels: &[DegradationLevel], seed: u64) -> Vec<EvalCase> {
    if levels.is_empty() {
        return traces
            .iter()
            .map(|t| EvalCase {
                trace: t.clone(),
                level: None,
            })
            .collect();
    }
    let pairs: Vec<(usize, DegradationLevel)> = levels
        .iter()
        .flat_map(|&l| (0..traces.len()).map(move |i| (i, l)))
        .collect();
    par::map(&pairs, |&(i, level)| EvalCase {
        trace: degrade(&traces[i], level, degrade_seed(seed, i, level)),
        level: Some(level),
    })
}

/// The 4 x 4 clean set: every posture from every perspective.
pub fn clean_matrix(seed: u64) -> Vec<LabeledTrace> {
    Posture::ALL
        .into_iter()
        .flat_map(|p| Perspective::ALL.into_iter().map(move |v| (p, v)))
        .map(|(p, v)| generate_synthetic(p, v, seed))
        .collect()
}
