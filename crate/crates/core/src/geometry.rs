//! Planar geometry kernels over normalized image coordinates.
//!
//! All angles are computed in the image plane; the depth coordinate of a
//! landmark is ignored.

use serde::{Serialize, Serializer};

use crate::pose_model::{Landmark, LandmarkFrame, Side};

/// Vector norms at or below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<&Landmark> for Point2 {
    fn from(l: &Landmark) -> Self {
        Point2::new(l.x, l.y)
    }
}

/// An angle in degrees, always within [0, 180].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AngleDegrees(f64);

impl AngleDegrees {
    /// Clamps into [0, 180]; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            return AngleDegrees(0.0);
        }
        AngleDegrees(value.clamp(0.0, 180.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Serialize for AngleDegrees {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("degenerate angle: vector norm {norm:e} is at or below {DEGENERATE_NORM:e}")]
pub struct DegenerateAngle {
    pub norm: f64,
}

/// Angle at `vertex` between rays towards `a` and `c`, from the arccos of the
/// normalized dot product.
pub fn get_angle(a: Point2, vertex: Point2, c: Point2) -> Result<AngleDegrees, DegenerateAngle> {
    let u = a.sub(vertex);
    let v = c.sub(vertex);
    angle_between(u, v)
}

fn angle_between(u: Point2, v: Point2) -> Result<AngleDegrees, DegenerateAngle> {
    let (nu, nv) = (u.norm(), v.norm());
    for norm in [nu, nv] {
        if !(norm > DEGENERATE_NORM) {
            return Err(DegenerateAngle { norm });
        }
    }
    let cos = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(AngleDegrees::new(cos.acos().to_degrees()))
}

/// Angle between the segment `bottom -> top` and straight up in the image
/// (the direction of decreasing y). Zero means perfectly upright.
pub fn inclination_from_vertical(top: Point2, bottom: Point2) -> Result<AngleDegrees, DegenerateAngle> {
    angle_between(top.sub(bottom), Point2::new(0.0, -1.0))
}

/// Mean visibility over the eight body landmarks of one side.
pub fn side_visibility(frame: &LandmarkFrame, side: Side) -> f64 {
    let idx = side.body_indices();
    let sum: f64 = idx.iter().map(|&i| frame.landmarks[i].visibility).sum();
    sum / idx.len() as f64
}
