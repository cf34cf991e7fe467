//! A brute-force model of the debouncer. Streaks are recomputed from scratch
//! at every frame by scanning backwards over the history instead of being
//! carried incrementally.

#![allow(dead_code)]

use posewarden_core::rules::{Overall, PostureAssessment, RuleFinding, RuleId, Verdict};
use posewarden_core::temporal::DebounceConfig;
use posewarden_core::Perspective;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRun {
    pub fires: Vec<i64>,
    /// (start, end) per incident in opening order; `end` is absent if still open.
    pub incidents: Vec<(i64, Option<i64>)>,
}

/// Time accumulated by the streak of `class` ending at frame `i`, and the
/// timestamp of its first frame. Unknown frames are skipped but break the
/// adjacency that accumulates time; the opposite class ends the scan.
pub fn streak_at(seq: &[(i64, Overall)], i: usize, class: Overall) -> Option<(i64, i64)> {
    if seq[i].1 != class {
        return None;
    }
    let opposite = if class == Overall::Bad { Overall::Good } else { Overall::Bad };
    let mut elapsed = 0;
    let mut start = seq[i].0;
    for j in (0..i).rev() {
        match seq[j].1 {
            c if c == opposite => break,
            Overall::Unknown => continue,
            _ => {
                start = seq[j].0;
                if seq[j + 1].1 == class {
                    elapsed += seq[j + 1].0 - seq[j].0;
                }
            }
        }
    }
    Some((elapsed, start))
}

pub fn run(seq: &[(i64, Overall)], cfg: &DebounceConfig) -> OracleRun {
    let mut fires = Vec::new();
    let mut incidents: Vec<(i64, Option<i64>)> = Vec::new();
    let mut last_fire = i64::MIN;
    for (i, &(ts, class)) in seq.iter().enumerate() {
        let open = incidents.last().is_some_and(|(_, end)| end.is_none());
        match class {
            Overall::Bad if open => {
                if ts - last_fire >= cfg.repeat_every_ms {
                    fires.push(ts);
                    last_fire = ts;
                }
            }
            Overall::Bad => {
                let (elapsed, start) = streak_at(seq, i, class).unwrap();
                if elapsed >= cfg.alert_after_ms {
                    incidents.push((start, None));
                    fires.push(ts);
                    last_fire = ts;
                }
            }
            Overall::Good if open => {
                let (elapsed, start) = streak_at(seq, i, class).unwrap();
                if elapsed >= cfg.clear_after_ms {
                    incidents.last_mut().unwrap().1 = Some(start);
                }
            }
            _ => {}
        }
    }
    OracleRun { fires, incidents }
}

pub fn assessment(ts_ms: i64, overall: Overall) -> PostureAssessment {
    let findings = RuleId::ALL
        .iter()
        .map(|&rule| {
            let verdict = match (overall, rule) {
                (Overall::Bad, RuleId::BackAngle) => Verdict::Bad,
                (Overall::Unknown, _) => Verdict::Indeterminate,
                _ => Verdict::Ok,
            };
            RuleFinding {
                rule,
                verdict,
                detail: None,
                measured: None,
            }
        })
        .collect();
    PostureAssessment {
        ts_ms,
        overall,
        perspective: Perspective::Left,
        findings,
    }
}

/// A random run-structured sequence of up to `max_len` frames, with gaps that
/// straddle typical debounce durations.
pub fn random_sequence<R: Rng>(rng: &mut R, max_len: usize) -> Vec<(i64, Overall)> {
    let n = rng.random_range(1..=max_len);
    let mut ts = rng.random_range(0..1_000_000i64);
    let mut class = Overall::Good;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random_bool(0.2) {
            class = match rng.random_range(0..10) {
                0..=4 => Overall::Bad,
                5..=7 => Overall::Good,
                _ => Overall::Unknown,
            };
        }
        out.push((ts, class));
        ts += match rng.random_range(0..10) {
            0 => rng.random_range(1..50),
            1 => rng.random_range(2_000..15_000),
            _ => rng.random_range(100..1_200),
        };
    }
    out
}

pub fn random_config<R: Rng>(rng: &mut R) -> DebounceConfig {
    DebounceConfig {
        alert_after_ms: rng.random_range(500..12_000),
        clear_after_ms: rng.random_range(100..4_000),
        repeat_every_ms: rng.random_range(500..20_000),
    }
}
