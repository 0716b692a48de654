//! Domain primitives shared by every subsystem.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A point in the normalized arena, nominally inside the unit square.
///
/// Fish, agents, centroids and lag targets all live in this frame. Values
/// produced by the dynamics are clamped to `[0, 1]²`; values coming from a
/// camera normalization are not, so callers can detect out-of-region
/// detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Vec2) -> f64 {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }

    /// Componentwise clamp to the unit square.
    pub fn clamp_unit(self) -> Vec2 {
        Vec2::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn in_unit_square(self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    /// Reflection about the vertical midline `x = 0.5`.
    pub fn mirror_x(self) -> Vec2 {
        Vec2::new(1.0 - self.x, self.y)
    }

    /// Arithmetic mean of a non-empty slice; `None` when empty.
    pub fn mean(points: &[Vec2]) -> Option<Vec2> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let (sx, sy) = points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Some(Vec2::new(sx / n, sy / n))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The tank extremity the school should be driven toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEnd {
    Left,
    #[default]
    Right,
}

impl TargetEnd {
    /// The x coordinate of this end: 0 for left, 1 for right.
    pub fn x(self) -> f64 {
        match self {
            TargetEnd::Left => 0.0,
            TargetEnd::Right => 1.0,
        }
    }

    pub fn opposite(self) -> TargetEnd {
        match self {
            TargetEnd::Left => TargetEnd::Right,
            TargetEnd::Right => TargetEnd::Left,
        }
    }

    pub fn index(self) -> usize {
        match self {
            TargetEnd::Left => 0,
            TargetEnd::Right => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetEnd::Left => "left",
            TargetEnd::Right => "right",
        }
    }
}

impl fmt::Display for TargetEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
