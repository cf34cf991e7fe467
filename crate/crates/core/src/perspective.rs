//! Camera viewpoint classification from left/right visibility asymmetry.
//!
//! A camera on the user's left sees the left side best, so a higher left
//! mean visibility classifies as [`Perspective::Left`] (or its diagonal when
//! the asymmetry is small).

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::side_visibility;
use crate::pose_model::{LandmarkFrame, Side};

pub const DEFAULT_PROFILE_THRESHOLD: f64 = 0.25;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 15;

/// Ordered from rightmost to leftmost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    Right,
    RightDiagonal,
    LeftDiagonal,
    Left,
}

impl Perspective {
    pub const ALL: [Perspective; 4] = [
        Perspective::RightDiagonal,
        Perspective::Right,
        Perspective::LeftDiagonal,
        Perspective::Left,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Left => "left",
            Perspective::Right => "right",
            Perspective::LeftDiagonal => "left_diagonal",
            Perspective::RightDiagonal => "right_diagonal",
        }
    }

    /// The same viewpoint seen in a horizontal mirror.
    pub fn mirrored(self) -> Perspective {
        match self {
            Perspective::Left => Perspective::Right,
            Perspective::Right => Perspective::Left,
            Perspective::LeftDiagonal => Perspective::RightDiagonal,
            Perspective::RightDiagonal => Perspective::LeftDiagonal,
        }
    }

    pub fn is_diagonal(self) -> bool {
        matches!(self, Perspective::LeftDiagonal | Perspective::RightDiagonal)
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Perspective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Perspective::Left),
            "right" => Ok(Perspective::Right),
            "left_diagonal" => Ok(Perspective::LeftDiagonal),
            "right_diagonal" => Ok(Perspective::RightDiagonal),
            other => Err(format!("unknown perspective {other:?}")),
        }
    }
}

/// The side whose landmarks the posture rules read.
pub fn trusted_side(p: Perspective) -> Side {
    match p {
        Perspective::Left | Perspective::LeftDiagonal => Side::Left,
        Perspective::Right | Perspective::RightDiagonal => Side::Right,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerspectiveConfig {
    /// Visibility difference at or beyond which the view counts as profile.
    pub profile_threshold: f64,
    /// Number of recent frames in the majority vote.
    pub smoothing_window: usize,
}

impl Default for PerspectiveConfig {
    fn default() -> Self {
        Self {
            profile_threshold: DEFAULT_PROFILE_THRESHOLD,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

/// Left minus right mean visibility.
pub fn visibility_difference(frame: &LandmarkFrame) -> f64 {
    side_visibility(frame, Side::Left) - side_visibility(frame, Side::Right)
}

/// Maps a visibility difference to a perspective. A zero difference resolves
/// to `RightDiagonal`.
pub fn classify_difference(d: f64, profile_threshold: f64) -> Perspective {
    if d >= profile_threshold {
        Perspective::Left
    } else if d > 0.0 {
        Perspective::LeftDiagonal
    } else if d > -profile_threshold {
        Perspective::RightDiagonal
    } else {
        Perspective::Right
    }
}

pub fn classify_perspective(frame: &LandmarkFrame) -> Perspective {
    classify_perspective_with(frame, DEFAULT_PROFILE_THRESHOLD)
}

pub fn classify_perspective_with(frame: &LandmarkFrame, profile_threshold: f64) -> Perspective {
    classify_difference(visibility_difference(frame), profile_threshold)
}

/// Majority vote over the most recent per-frame classifications. Ties go to
/// whichever tied class was seen most recently.
#[derive(Debug, Clone)]
pub struct PerspectiveSmoother {
    config: PerspectiveConfig,
    recent: VecDeque<Perspective>,
}

impl PerspectiveSmoother {
    pub fn new(config: PerspectiveConfig) -> Self {
        let window = config.smoothing_window.max(1);
        Self {
            config: PerspectiveConfig {
                smoothing_window: window,
                ..config
            },
            recent: VecDeque::with_capacity(window),
        }
    }

    /// Classifies the frame, records it, and returns the smoothed perspective.
    pub fn push(&mut self, frame: &LandmarkFrame) -> Perspective {
        let raw = classify_perspective_with(frame, self.config.profile_threshold);
        self.push_class(raw)
    }

    pub fn push_class(&mut self, p: Perspective) -> Perspective {
        if self.recent.len() == self.config.smoothing_window {
            self.recent.pop_front();
        }
        self.recent.push_back(p);
        self.current().expect("window is non-empty after push")
    }

    pub fn current(&self) -> Option<Perspective> {
        let mut counts = [0usize; 4];
        let mut last_seen = [0usize; 4];
        for (i, p) in self.recent.iter().enumerate() {
            counts[*p as usize] += 1;
            last_seen[*p as usize] = i;
        }
        Perspective::ALL
            .iter()
            .copied()
            .filter(|p| counts[*p as usize] > 0)
            .max_by_key(|p| (counts[*p as usize], last_seen[*p as usize]))
    }
}

impl Default for PerspectiveSmoother {
    fn default() -> Self {
        Self::new(PerspectiveConfig::default())
    }
}
