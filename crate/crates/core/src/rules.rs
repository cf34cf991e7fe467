//! Per-frame posture rules and their aggregation.
//!
//! Every rule abstains with [`Verdict::Indeterminate`] when a landmark it reads
//! falls below the visibility gate; an abstention never counts as bad.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{get_angle, inclination_from_vertical, Point2};
use crate::perspective::{trusted_side, Perspective};
use crate::pose_model::{LandmarkFrame, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    BackAngle,
    LegCrossed,
    FeetAboveHips,
    KneeAngle,
    HeadPosition,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [
        RuleId::BackAngle,
        RuleId::LegCrossed,
        RuleId::FeetAboveHips,
        RuleId::KneeAngle,
        RuleId::HeadPosition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::BackAngle => "back_angle",
            RuleId::LegCrossed => "leg_crossed",
            RuleId::FeetAboveHips => "feet_above_hips",
            RuleId::KneeAngle => "knee_angle",
            RuleId::HeadPosition => "head_position",
        }
    }

    /// Landmarks this rule reads for a given perspective; the visibility gate
    /// applies to exactly these.
    pub fn landmarks_read(self, perspective: Perspective) -> Vec<usize> {
        let s = trusted_side(perspective);
        let both = |f: fn(Side) -> usize| [f(Side::Left), f(Side::Right)];
        match self {
            RuleId::BackAngle => vec![s.knee(), s.hip(), s.shoulder()],
            RuleId::KneeAngle => vec![s.hip(), s.knee(), s.ankle()],
            RuleId::HeadPosition => vec![s.ear(), s.shoulder(), s.hip(), s.knee()],
            RuleId::FeetAboveHips => [both(Side::ankle), both(Side::hip)].concat(),
            RuleId::LegCrossed => {
                [both(Side::ankle), both(Side::knee), both(Side::hip)].concat()
            }
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Bad,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    LeanForward,
    LeanBack,
    HeadForward,
    HeadBack,
}

impl Detail {
    pub fn as_str(self) -> &'static str {
        match self {
            Detail::LeanForward => "lean_forward",
            Detail::LeanBack => "lean_back",
            Detail::HeadForward => "head_forward",
            Detail::HeadBack => "head_back",
        }
    }
}

impl fmt::Display for Detail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleFinding {
    pub rule: RuleId,
    pub verdict: Verdict,
    pub detail: Option<Detail>,
    /// Angle in degrees, or a normalized coordinate gap for the position rules.
    pub measured: Option<f64>,
}

impl RuleFinding {
    pub fn indeterminate(rule: RuleId) -> Self {
        Self {
            rule,
            verdict: Verdict::Indeterminate,
            detail: None,
            measured: None,
        }
    }

    fn judged(rule: RuleId, bad: bool, detail: Option<Detail>, measured: f64) -> Self {
        Self {
            rule,
            verdict: if bad { Verdict::Bad } else { Verdict::Ok },
            detail: if bad { detail } else { None },
            measured: Some(measured),
        }
    }

    pub fn is_bad(&self) -> bool {
        self.verdict == Verdict::Bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Good,
    Bad,
    Unknown,
}

/// Per-frame result. Serializes as the analysis object of the HTTP API
/// (the timestamp is carried separately).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostureAssessment {
    #[serde(skip)]
    pub ts_ms: i64,
    pub overall: Overall,
    pub perspective: Perspective,
    pub findings: Vec<RuleFinding>,
}

impl PostureAssessment {
    pub fn finding(&self, rule: RuleId) -> &RuleFinding {
        self.findings
            .iter()
            .find(|f| f.rule == rule)
            .expect("assessments carry one finding per rule")
    }

    pub fn bad_findings(&self) -> impl Iterator<Item = &RuleFinding> {
        self.findings.iter().filter(|f| f.is_bad())
    }

    pub fn indeterminate_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.verdict == Verdict::Indeterminate)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid thresholds: {0}")]
pub struct ThresholdError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleThresholds {
    pub back_ok_low: f64,
    pub back_ok_high: f64,
    pub knee_ok_low: f64,
    pub knee_ok_high: f64,
    /// Largest ear-over-shoulder inclination from vertical, degrees.
    pub head_forward_max: f64,
    pub feet_margin: f64,
    pub crossed_margin: f64,
    pub min_visibility: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self {
            back_ok_low: 75.0,
            back_ok_high: 105.0,
            knee_ok_low: 70.0,
            knee_ok_high: 110.0,
            head_forward_max: 25.0,
            feet_margin: 0.0,
            crossed_margin: 0.02,
            min_visibility: 0.5,
        }
    }
}

impl RuleThresholds {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        let all = [
            self.back_ok_low,
            self.back_ok_high,
            self.knee_ok_low,
            self.knee_ok_high,
            self.head_forward_max,
            self.feet_margin,
            self.crossed_margin,
            self.min_visibility,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ThresholdError("all thresholds must be finite".into()));
        }
        if self.back_ok_low >= self.back_ok_high {
            return Err(ThresholdError("back_ok_low must be below back_ok_high".into()));
        }
        if self.knee_ok_low >= self.knee_ok_high {
            return Err(ThresholdError("knee_ok_low must be below knee_ok_high".into()));
        }
        if self.feet_margin < 0.0 || self.crossed_margin < 0.0 || self.head_forward_max < 0.0 {
            return Err(ThresholdError("margins must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(ThresholdError("min_visibility must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn visible(frame: &LandmarkFrame, idx: usize, t: &RuleThresholds) -> bool {
    frame.landmarks[idx].visibility >= t.min_visibility
}

fn all_visible(frame: &LandmarkFrame, idxs: &[usize], t: &RuleThresholds) -> bool {
    idxs.iter().all(|&i| visible(frame, i, t))
}

fn pt(frame: &LandmarkFrame, idx: usize) -> Point2 {
    Point2::from(&frame.landmarks[idx])
}

pub fn check_back_angle(frame: &LandmarkFrame, perspective: Perspective, t: &RuleThresholds) -> RuleFinding {
    let rule = RuleId::BackAngle;
    let s = trusted_side(perspective);
    if !all_visible(frame, &rule.landmarks_read(perspective), t) {
        return RuleFinding::indeterminate(rule);
    }
    let Ok(theta) = get_angle(pt(frame, s.knee()), pt(frame, s.hip()), pt(frame, s.shoulder())) else {
        return RuleFinding::indeterminate(rule);
    };
    let theta = theta.value();
    let detail = if theta < t.back_ok_low {
        Some(Detail::LeanForward)
    } else if theta > t.back_ok_high {
        Some(Detail::LeanBack)
    } else {
        None
    };
    RuleFinding::judged(rule, detail.is_some(), detail, theta)
}

pub fn check_knee_angle(frame: &LandmarkFrame, perspective: Perspective, t: &RuleThresholds) -> RuleFinding {
    let rule = RuleId::KneeAngle;
    let s = trusted_side(perspective);
    if !all_visible(frame, &rule.landmarks_read(perspective), t) {
        return RuleFinding::indeterminate(rule);
    }
    let Ok(theta) = get_angle(pt(frame, s.hip()), pt(frame, s.knee()), pt(frame, s.ankle())) else {
        return RuleFinding::indeterminate(rule);
    };
    let theta = theta.value();
    let ok = (t.knee_ok_low..=t.knee_ok_high).contains(&theta);
    RuleFinding::judged(rule, !ok, None, theta)
}

/// Bad when the highest visible ankle sits above the higher hip by more than
/// `feet_margin`. Both hips must pass the gate; a gated ankle is skipped.
/// `measured` is the hip-minus-ankle height gap.
pub fn check_feet_above_hips(
    frame: &LandmarkFrame,
    _perspective: Perspective,
    t: &RuleThresholds,
) -> RuleFinding {
    let rule = RuleId::FeetAboveHips;
    let hips = [Side::Left.hip(), Side::Right.hip()];
    if !all_visible(frame, &hips, t) {
        return RuleFinding::indeterminate(rule);
    }
    let hip_y = hips.iter().map(|&i| frame.landmarks[i].y).fold(f64::INFINITY, f64::min);
    let ankle_y = [Side::Left.ankle(), Side::Right.ankle()]
        .into_iter()
        .filter(|&i| visible(frame, i, t))
        .map(|i| frame.landmarks[i].y)
        .reduce(f64::min);
    let Some(ankle_y) = ankle_y else {
        return RuleFinding::indeterminate(rule);
    };
    RuleFinding::judged(rule, ankle_y < hip_y - t.feet_margin, None, hip_y - ankle_y)
}

/// Bad when a visible ankle is raised to at least the opposite knee's height
/// (less `crossed_margin`) while lying horizontally within the thigh region
/// spanned by both hips and both knees. `measured` is the largest
/// knee-minus-ankle height gap over the visible ankles.
pub fn check_leg_crossed(frame: &LandmarkFrame, _perspective: Perspective, t: &RuleThresholds) -> RuleFinding {
    let rule = RuleId::LegCrossed;
    let sides = [Side::Left, Side::Right];
    let knees_and_hips = [
        Side::Left.knee(),
        Side::Right.knee(),
        Side::Left.hip(),
        Side::Right.hip(),
    ];
    if !all_visible(frame, &knees_and_hips, t) {
        return RuleFinding::indeterminate(rule);
    }
    let (lo, hi) = knees_and_hips
        .iter()
        .map(|&i| frame.landmarks[i].x)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));

    let mut determinate = 0;
    let mut crossed = false;
    let mut gap = f64::NEG_INFINITY;
    for side in sides {
        if !visible(frame, side.ankle(), t) {
            continue;
        }
        determinate += 1;
        let ankle = frame.landmarks[side.ankle()];
        let knee_y = frame.landmarks[side.opposite().knee()].y;
        gap = gap.max(knee_y - ankle.y);
        let raised = ankle.y < knee_y - t.crossed_margin;
        let over_thigh = (lo..=hi).contains(&ankle.x);
        crossed |= raised && over_thigh;
    }
    if crossed {
        RuleFinding::judged(rule, true, None, gap)
    } else if determinate == sides.len() {
        RuleFinding::judged(rule, false, None, gap)
    } else {
        RuleFinding::indeterminate(rule)
    }
}

/// Ear-over-shoulder inclination. The facing direction, needed to tell a
/// forward head from a backward one, follows the sign of knee.x - hip.x.
pub fn check_head_position(
    frame: &LandmarkFrame,
    perspective: Perspective,
    t: &RuleThresholds,
) -> RuleFinding {
    let rule = RuleId::HeadPosition;
    let s = trusted_side(perspective);
    if !all_visible(frame, &rule.landmarks_read(perspective), t) {
        return RuleFinding::indeterminate(rule);
    }
    let (ear, shoulder) = (pt(frame, s.ear()), pt(frame, s.shoulder()));
    let Ok(phi) = inclination_from_vertical(ear, shoulder) else {
        return RuleFinding::indeterminate(rule);
    };
    let phi = phi.value();
    if phi <= t.head_forward_max {
        return RuleFinding::judged(rule, false, None, phi);
    }
    let facing = if frame.landmarks[s.knee()].x - frame.landmarks[s.hip()].x >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let detail = if (ear.x - shoulder.x) * facing > 0.0 {
        Detail::HeadForward
    } else {
        Detail::HeadBack
    };
    RuleFinding::judged(rule, true, Some(detail), phi)
}

pub fn check(rule: RuleId, frame: &LandmarkFrame, perspective: Perspective, t: &RuleThresholds) -> RuleFinding {
    match rule {
        RuleId::BackAngle => check_back_angle(frame, perspective, t),
        RuleId::LegCrossed => check_leg_crossed(frame, perspective, t),
        RuleId::FeetAboveHips => check_feet_above_hips(frame, perspective, t),
        RuleId::KneeAngle => check_knee_angle(frame, perspective, t),
        RuleId::HeadPosition => check_head_position(frame, perspective, t),
    }
}

/// Runs every rule and aggregates: bad if any finding is bad, good if none is
/// bad and the back angle is determinate, unknown otherwise.
pub fn assess(frame: &LandmarkFrame, perspective: Perspective, t: &RuleThresholds) -> PostureAssessment {
    let findings: Vec<RuleFinding> = RuleId::ALL
        .iter()
        .map(|&r| check(r, frame, perspective, t))
        .collect();
    let overall = aggregate(&findings);
    PostureAssessment {
        ts_ms: frame.ts_ms,
        overall,
        perspective,
        findings,
    }
}

fn aggregate(findings: &[RuleFinding]) -> Overall {
    if findings.iter().any(RuleFinding::is_bad) {
        return Overall::Bad;
    }
    let back_determinate = findings
        .iter()
        .any(|f| f.rule == RuleId::BackAngle && f.verdict != Verdict::Indeterminate);
    if back_determinate {
        Overall::Good
    } else {
        Overall::Unknown
    }
}
