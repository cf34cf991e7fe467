//! Posture monitoring from 33-point pose landmarks.
//!
//! The pipeline runs frame by frame: [`pose_model`] validates input,
//! [`perspective`] decides which body side the camera sees, [`rules`] judges
//! the seated posture and [`temporal`] turns sustained violations into alerts
//! and incidents, which [`store`] persists. [`harness`] drives the same
//! pipeline over synthetic traces for evaluation.

pub mod geometry;
pub mod harness;
pub mod par;
pub mod perspective;
pub mod pose_model;
pub mod rules;
pub mod store;
pub mod temporal;

pub use geometry::{get_angle, inclination_from_vertical, side_visibility, AngleDegrees, Point2};
pub use perspective::{classify_perspective, trusted_side, Perspective, PerspectiveSmoother};
pub use pose_model::{parse_frame, serialize_frame, Landmark, LandmarkFrame};
pub use rules::{assess, Overall, PostureAssessment, RuleFinding, RuleId, RuleThresholds, Verdict};
pub use temporal::{AlertDecision, DebounceConfig, Debouncer, Incident};
