//! Debouncing per-frame assessments into alerts and incidents, and bucketed
//! history summaries.
//!
//! # State machine
//!
//! Time only accumulates between two consecutive assessments of the same
//! class. An `unknown` assessment therefore freezes both streak clocks: it
//! neither advances nor resets them, and the interval on either side of it
//! is not counted.
//!
//! ```text
//!   bad streak >= alert_after_ms            good streak >= clear_after_ms
//! Idle ─────────────────────────► Open ───────────────────────────────► Idle
//!   (fire, incident opens)         │ ▲    (incident closes at the first
//!                                  └─┘     good frame of the streak)
//!                    bad, ts >= last fire + repeat_every_ms: fire again
//! ```
//!
//! A good assessment resets the bad streak; a bad one resets the good streak.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rules::{Detail, Overall, PostureAssessment, RuleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebounceConfig {
    pub alert_after_ms: i64,
    pub clear_after_ms: i64,
    pub repeat_every_ms: i64,
}

impl Default for DebounceConfig {
    fn default() -> Self {
        Self {
            alert_after_ms: 10_000,
            clear_after_ms: 2_000,
            repeat_every_ms: 60_000,
        }
    }
}

impl DebounceConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        if self.alert_after_ms > 0 && self.clear_after_ms > 0 && self.repeat_every_ms > 0 {
            Ok(())
        } else {
            Err(TemporalError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemporalError {
    #[error("assessment at {ts_ms} does not follow {last_ms}")]
    OutOfOrder { ts_ms: i64, last_ms: i64 },
    #[error("debounce durations must be strictly positive")]
    InvalidConfig,
    #[error("invalid time range: {0}")]
    InvalidRange(String),
}

/// An interval of sustained bad posture. `end_ms` is absent while open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub start_ms: i64,
    pub end_ms: Option<i64>,
    pub rules: BTreeSet<RuleId>,
    pub peak_detail: Option<Detail>,
}

impl Incident {
    pub fn is_open(&self) -> bool {
        self.end_ms.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlertReason {
    pub rules: Vec<RuleId>,
    pub detail: Option<Detail>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlertDecision {
    pub ts_ms: i64,
    pub fire: bool,
    pub reason: Option<AlertReason>,
    /// Identifier of the incident open after this update, if any.
    pub incident_id: Option<u64>,
    /// Incident closed by this update.
    pub closed: Option<Incident>,
}

#[derive(Debug, Clone, Default)]
struct Evidence {
    rules: BTreeSet<RuleId>,
    details: BTreeMap<Detail, u32>,
}

impl Evidence {
    fn absorb(&mut self, a: &PostureAssessment) {
        for f in a.bad_findings() {
            self.rules.insert(f.rule);
            if let Some(d) = f.detail {
                *self.details.entry(d).or_default() += 1;
            }
        }
    }

    /// Most frequent detail; ties go to the earliest in declaration order.
    fn peak_detail(&self) -> Option<Detail> {
        self.details
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(d, _)| *d)
    }
}

#[derive(Debug, Clone)]
struct Streak {
    start_ms: i64,
    elapsed_ms: i64,
    evidence: Evidence,
}

impl Streak {
    fn new(start_ms: i64) -> Self {
        Self {
            start_ms,
            elapsed_ms: 0,
            evidence: Evidence::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct OpenIncident {
    id: u64,
    start_ms: i64,
    last_fire_ms: i64,
    evidence: Evidence,
}

/// One debouncing state machine; owned by a single stream.
#[derive(Debug, Clone)]
pub struct Debouncer {
    config: DebounceConfig,
    last: Option<(i64, Overall)>,
    bad: Option<Streak>,
    good: Option<Streak>,
    open: Option<OpenIncident>,
    next_id: u64,
    closed: Vec<Incident>,
}

impl Debouncer {
    pub fn new(config: DebounceConfig) -> Self {
        Self {
            config,
            last: None,
            bad: None,
            good: None,
            open: None,
            next_id: 1,
            closed: Vec::new(),
        }
    }

    pub fn config(&self) -> &DebounceConfig {
        &self.config
    }

    /// Closed incidents in the order they closed.
    pub fn closed_incidents(&self) -> &[Incident] {
        &self.closed
    }

    /// The open incident, if any, with `end_ms` absent.
    pub fn open_incident(&self) -> Option<Incident> {
        self.open.as_ref().map(|o| Incident {
            start_ms: o.start_ms,
            end_ms: None,
            rules: o.evidence.rules.clone(),
            peak_detail: o.evidence.peak_detail(),
        })
    }

    /// Closed incidents followed by the open one.
    pub fn incidents(&self) -> Vec<Incident> {
        let mut all = self.closed.clone();
        all.extend(self.open_incident());
        all
    }

    fn extend_streak(streak: &mut Option<Streak>, ts: i64, continues: bool, last_ts: i64) -> &mut Streak {
        let s = streak.get_or_insert_with(|| Streak::new(ts));
        if continues && s.start_ms != ts {
            s.elapsed_ms += ts - last_ts;
        }
        s
    }

    pub fn update(&mut self, a: &PostureAssessment) -> Result<AlertDecision, TemporalError> {
        let ts = a.ts_ms;
        let (last_ts, last_class) = match self.last {
            Some((last_ms, _)) if ts <= last_ms => {
                return Err(TemporalError::OutOfOrder { ts_ms: ts, last_ms });
            }
            Some((last_ms, class)) => (last_ms, Some(class)),
            None => (ts, None),
        };
        let mut decision = AlertDecision {
            ts_ms: ts,
            fire: false,
            reason: None,
            incident_id: None,
            closed: None,
        };

        match a.overall {
            Overall::Bad => {
                self.good = None;
                let continues = last_class == Some(Overall::Bad);
                let streak = Self::extend_streak(&mut self.bad, ts, continues, last_ts);
                streak.evidence.absorb(a);
                let elapsed = streak.elapsed_ms;
                if let Some(open) = self.open.as_mut() {
                    open.evidence.absorb(a);
                    if ts >= open.last_fire_ms + self.config.repeat_every_ms {
                        open.last_fire_ms = ts;
                        decision.fire = true;
                    }
                } else if elapsed >= self.config.alert_after_ms {
                    let streak = self.bad.as_ref().expect("bad streak exists");
                    self.open = Some(OpenIncident {
                        id: self.next_id,
                        start_ms: streak.start_ms,
                        last_fire_ms: ts,
                        evidence: streak.evidence.clone(),
                    });
                    self.next_id += 1;
                    decision.fire = true;
                }
            }
            Overall::Good => {
                self.bad = None;
                let continues = last_class == Some(Overall::Good);
                let streak = Self::extend_streak(&mut self.good, ts, continues, last_ts);
                if streak.elapsed_ms >= self.config.clear_after_ms {
                    if let Some(open) = self.open.take() {
                        let incident = Incident {
                            start_ms: open.start_ms,
                            end_ms: Some(streak.start_ms),
                            rules: open.evidence.rules.clone(),
                            peak_detail: open.evidence.peak_detail(),
                        };
                        self.closed.push(incident.clone());
                        decision.closed = Some(incident);
                    }
                }
            }
            Overall::Unknown => {}
        }

        if let Some(open) = &self.open {
            decision.incident_id = Some(open.id);
            if decision.fire {
                decision.reason = Some(AlertReason {
                    rules: open.evidence.rules.iter().copied().collect(),
                    detail: open.evidence.peak_detail(),
                });
            }
        }
        self.last = Some((ts, a.overall));
        Ok(decision)
    }
}

impl Default for Debouncer {
    fn default() -> Self {
        Self::new(DebounceConfig::default())
    }
}

pub const DAY_MS: i64 = 86_400_000;
pub const WEEK_MS: i64 = 7 * DAY_MS;
/// Upper bound on buckets per summary.
pub const MAX_BUCKETS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Day,
    Week,
}

impl Bucket {
    /// Start of the UTC calendar bucket containing `ms`. Weeks begin on Monday.
    pub fn floor(self, ms: i64) -> i64 {
        let day = ms.div_euclid(DAY_MS);
        match self {
            Bucket::Day => day * DAY_MS,
            // 1970-01-05 (epoch day 4) was a Monday.
            Bucket::Week => (day - (day - 4).rem_euclid(7)) * DAY_MS,
        }
    }

    pub fn length_ms(self) -> i64 {
        match self {
            Bucket::Day => DAY_MS,
            Bucket::Week => WEEK_MS,
        }
    }
}

impl std::str::FromStr for Bucket {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Bucket::Day),
            "week" => Ok(Bucket::Week),
            other => Err(TemporalError::InvalidRange(format!("unknown bucket {other:?}"))),
        }
    }
}

/// Half-open `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl TimeRange {
    pub fn new(start_ms: i64, end_ms: i64) -> Result<Self, TemporalError> {
        if end_ms <= start_ms {
            return Err(TemporalError::InvalidRange(format!(
                "end {end_ms} must be after start {start_ms}"
            )));
        }
        Ok(Self { start_ms, end_ms })
    }

    /// Overlap length with `[start, end)`.
    pub fn overlap(&self, start: i64, end: i64) -> i64 {
        (end.min(self.end_ms) - start.max(self.start_ms)).max(0)
    }

    /// Whether `[start, end)` shares any time with the range; an absent end
    /// is unbounded.
    pub fn intersects(&self, start: i64, end: Option<i64>) -> bool {
        start < self.end_ms && end.map_or(true, |e| e > self.start_ms)
    }
}

impl std::str::FromStr for TimeRange {
    type Err = TemporalError;

    /// Parses `START..END` in epoch milliseconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TemporalError::InvalidRange(format!("expected START..END in epoch ms, got {s:?}"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start = a.trim().parse::<i64>().map_err(|_| bad())?;
        let end = b.trim().parse::<i64>().map_err(|_| bad())?;
        TimeRange::new(start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BucketSummary {
    pub start_ms: i64,
    pub end_ms: i64,
    /// Incidents whose (window-clipped) start falls in this bucket.
    pub count: u32,
    /// Bad-posture time inside this bucket and the window.
    pub duration_ms: i64,
    /// An open incident contributes time to this bucket.
    pub ongoing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistorySummary {
    pub bucket: Bucket,
    pub range: TimeRange,
    pub buckets: Vec<BucketSummary>,
    pub total_count: u32,
    pub total_duration_ms: i64,
}

/// Buckets incidents over `window`. Open incidents run to the window end and
/// mark the buckets they touch as ongoing. Durations spanning bucket
/// boundaries are split by overlap.
pub fn summarize(incidents: &[Incident], window: TimeRange, bucket: Bucket) -> Result<HistorySummary, TemporalError> {
    let len = bucket.length_ms();
    let first = bucket.floor(window.start_ms);
    let n = (window.end_ms - first + len - 1) / len;
    if n as usize > MAX_BUCKETS {
        return Err(TemporalError::InvalidRange(format!(
            "{n} buckets exceeds the limit of {MAX_BUCKETS}"
        )));
    }
    let mut buckets: Vec<BucketSummary> = (0..n)
        .map(|i| BucketSummary {
            start_ms: first + i * len,
            end_ms: first + (i + 1) * len,
            count: 0,
            duration_ms: 0,
            ongoing: false,
        })
        .collect();

    for inc in incidents {
        if !window.intersects(inc.start_ms, inc.end_ms) {
            continue;
        }
        let start = inc.start_ms.max(window.start_ms);
        let end = inc.end_ms.unwrap_or(window.end_ms).min(window.end_ms);
        let home = ((bucket.floor(start) - first) / len) as usize;
        buckets[home].count += 1;
        for b in &mut buckets[home..] {
            if b.start_ms >= end {
                break;
            }
            let d = (end.min(b.end_ms) - start.max(b.start_ms)).max(0);
            b.duration_ms += d;
            if inc.is_open() && d > 0 {
                b.ongoing = true;
            }
        }
    }

    let total_count = buckets.iter().map(|b| b.count).sum();
    let total_duration_ms = buckets.iter().map(|b| b.duration_ms).sum();
    Ok(HistorySummary {
        bucket,
        range: window,
        buckets,
        total_count,
        total_duration_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perspective::Perspective;
    use crate::rules::{RuleFinding, Verdict};

    fn assessment(ts: i64, overall: Overall) -> PostureAssessment {
        let mut findings: Vec<RuleFinding> = RuleId::ALL
            .iter()
            .map(|&r| RuleFinding {
                rule: r,
                verdict: Verdict::Ok,
                detail: None,
                measured: Some(1.0),
            })
            .collect();
        match overall {
            Overall::Bad => {
                findings[0].verdict = Verdict::Bad;
                findings[0].detail = Some(Detail::LeanForward);
            }
            Overall::Unknown => findings[0] = RuleFinding::indeterminate(RuleId::BackAngle),
            Overall::Good => {}
        }
        PostureAssessment {
            ts_ms: ts,
            overall,
            perspective: Perspective::Left,
            findings,
        }
    }

    fn run(d: &mut Debouncer, from: i64, to: i64, step: i64, o: Overall) -> Vec<AlertDecision> {
        (from..to)
            .step_by(step as usize)
            .map(|t| d.update(&assessment(t, o)).unwrap())
            .collect()
    }

    #[test]
    fn twelve_seconds_of_bad_fires_once_at_ten_seconds() {
        let mut d = Debouncer::default();
        let out = run(&mut d, 0, 12_000, 100, Overall::Bad);
        let fires: Vec<i64> = out.iter().filter(|x| x.fire).map(|x| x.ts_ms).collect();
        assert_eq!(fires, vec![10_000]);
        let fired = out.iter().find(|x| x.fire).unwrap();
        assert_eq!(fired.incident_id, Some(1));
        let reason = fired.reason.as_ref().unwrap();
        assert_eq!(reason.rules, vec![RuleId::BackAngle]);
        assert_eq!(reason.detail, Some(Detail::LeanForward));
        assert_eq!(d.open_incident().unwrap().start_ms, 0);
    }

    #[test]
    fn short_streak_never_opens() {
        let mut d = Debouncer::default();
        let mut out = run(&mut d, 0, 8_000, 100, Overall::Bad);
        out.extend(run(&mut d, 8_000, 20_000, 100, Overall::Good));
        assert!(out.iter().all(|x| !x.fire && x.incident_id.is_none()));
        assert!(d.incidents().is_empty());
    }

    #[test]
    fn unknown_gap_freezes_streaks_and_keeps_repeat_schedule() {
        let mut d = Debouncer::default();
        let mut out = run(&mut d, 0, 11_000, 100, Overall::Bad);
        out.extend(run(&mut d, 11_000, 41_000, 100, Overall::Unknown));
        out.extend(run(&mut d, 41_000, 80_000, 100, Overall::Bad));
        let fires: Vec<i64> = out.iter().filter(|x| x.fire).map(|x| x.ts_ms).collect();
        assert_eq!(fires, vec![10_000, 70_000]);
        assert!(out.iter().skip(100).all(|x| x.incident_id == Some(1)));
    }

    #[test]
    fn unknown_does_not_reset_a_pending_streak() {
        let mut d = Debouncer::default();
        let mut out = run(&mut d, 0, 6_000, 100, Overall::Bad);
        out.extend(run(&mut d, 6_000, 9_000, 100, Overall::Unknown));
        out.extend(run(&mut d, 9_000, 20_000, 100, Overall::Bad));
        // 5.9 s before the gap; the 9.0 s frame adds nothing, so 4.1 s more
        // are needed after it.
        let fires: Vec<i64> = out.iter().filter(|x| x.fire).map(|x| x.ts_ms).collect();
        assert_eq!(fires, vec![13_100]);
        assert_eq!(d.open_incident().unwrap().start_ms, 0);
    }

    #[test]
    fn single_good_frame_keeps_incident_open() {
        let mut d = Debouncer::default();
        run(&mut d, 0, 11_000, 100, Overall::Bad);
        d.update(&assessment(11_000, Overall::Good)).unwrap();
        let out = run(&mut d, 11_100, 12_000, 100, Overall::Bad);
        assert!(out.iter().all(|x| x.incident_id == Some(1)));
        assert!(d.closed_incidents().is_empty());
    }

    #[test]
    fn sustained_good_closes_at_first_good_frame() {
        let mut d = Debouncer::default();
        run(&mut d, 0, 11_000, 100, Overall::Bad);
        let out = run(&mut d, 11_000, 14_000, 100, Overall::Good);
        let closing = out.iter().find(|x| x.closed.is_some()).unwrap();
        assert_eq!(closing.ts_ms, 13_000);
        let inc = closing.closed.as_ref().unwrap();
        assert_eq!((inc.start_ms, inc.end_ms), (0, Some(11_000)));
        assert_eq!(inc.peak_detail, Some(Detail::LeanForward));
        assert_eq!(closing.incident_id, None);
        // The next incident gets a fresh id.
        let out = run(&mut d, 14_000, 25_000, 100, Overall::Bad);
        assert_eq!(out.iter().find(|x| x.fire).unwrap().incident_id, Some(2));
    }

    #[test]
    fn out_of_order_is_rejected_without_state_change() {
        let mut d = Debouncer::default();
        run(&mut d, 0, 5_000, 100, Overall::Bad);
        let err = d.update(&assessment(4_900, Overall::Bad)).unwrap_err();
        assert!(matches!(err, TemporalError::OutOfOrder { .. }));
        let out = run(&mut d, 5_000, 11_000, 100, Overall::Bad);
        assert_eq!(out.iter().filter(|x| x.fire).count(), 1);
    }

    #[test]
    fn peak_detail_tie_prefers_declaration_order() {
        let mut e = Evidence::default();
        e.details.insert(Detail::HeadBack, 3);
        e.details.insert(Detail::LeanBack, 3);
        e.details.insert(Detail::HeadForward, 1);
        assert_eq!(e.peak_detail(), Some(Detail::LeanBack));
    }

    fn closed(start: i64, end: i64) -> Incident {
        Incident {
            start_ms: start,
            end_ms: Some(end),
            rules: [RuleId::BackAngle].into(),
            peak_detail: None,
        }
    }

    // Monday 2024-01-01T00:00:00Z
    const MONDAY: i64 = 1_704_067_200_000;

    #[test]
    fn week_floor_is_monday() {
        assert_eq!(Bucket::Week.floor(MONDAY + 3 * DAY_MS + 5), MONDAY);
        assert_eq!(Bucket::Week.floor(MONDAY - 1), MONDAY - WEEK_MS);
        assert_eq!(Bucket::Day.floor(MONDAY + DAY_MS + 17), MONDAY + DAY_MS);
    }

    #[test]
    fn empty_history_is_all_zero() {
        let w = TimeRange::new(MONDAY, MONDAY + 4 * WEEK_MS).unwrap();
        let s = summarize(&[], w, Bucket::Week).unwrap();
        assert_eq!(s.buckets.len(), 4);
        assert!(s.buckets.iter().all(|b| b.count == 0 && b.duration_ms == 0));
    }

    #[test]
    fn single_incident_in_week() {
        let ten = MONDAY + 10 * 3_600_000;
        let w = TimeRange::new(MONDAY - WEEK_MS, MONDAY + 2 * WEEK_MS).unwrap();
        let s = summarize(&[closed(ten, ten + 300_000)], w, Bucket::Week).unwrap();
        assert_eq!(s.buckets.len(), 3);
        assert_eq!(s.buckets[1].count, 1);
        assert_eq!(s.buckets[1].duration_ms, 300_000);
        assert_eq!(s.total_duration_ms, 300_000);
    }

    #[test]
    fn boundary_spanning_incident_is_split() {
        let midnight = MONDAY + DAY_MS;
        let inc = closed(midnight - 60_000, midnight + 180_000);
        let w = TimeRange::new(MONDAY, MONDAY + 3 * DAY_MS).unwrap();
        let s = summarize(&[inc], w, Bucket::Day).unwrap();
        assert_eq!(s.buckets[0].duration_ms, 60_000);
        assert_eq!(s.buckets[1].duration_ms, 180_000);
        assert_eq!((s.buckets[0].count, s.buckets[1].count), (1, 0));
    }

    #[test]
    fn open_incident_runs_to_window_end() {
        let w = TimeRange::new(MONDAY, MONDAY + DAY_MS).unwrap();
        let inc = Incident {
            end_ms: None,
            ..closed(MONDAY + DAY_MS - 1_000, 0)
        };
        let s = summarize(&[inc], w, Bucket::Day).unwrap();
        assert_eq!(s.buckets[0].duration_ms, 1_000);
        assert!(s.buckets[0].ongoing);
    }

    #[test]
    fn range_parsing() {
        assert_eq!("10..20".parse::<TimeRange>().unwrap(), TimeRange::new(10, 20).unwrap());
        assert!("20..10".parse::<TimeRange>().is_err());
        assert!("abc".parse::<TimeRange>().is_err());
        assert!("1..x".parse::<TimeRange>().is_err());
        let w = TimeRange::new(0, i64::MAX / 2).unwrap();
        assert!(summarize(&[], w, Bucket::Day).is_err());
    }
}
