//! Planar rigid-motion algebra.
//!
//! Poses keep their heading as a scalar angle; homogeneous 3×3 transforms are
//! built on demand from them. A transform `T` maps coordinates expressed in a
//! child frame into its parent frame: `p_parent = T · p_child`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(&self, other: &Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(&self, other: &Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(&self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    /// Rotate counter-clockwise about the origin.
    pub fn rotate(&self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Agent pose in the world frame. The heading is always kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// World-from-local transform of this pose.
    pub fn to_transform(&self) -> Transform {
        pose_to_transform(self)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose({:.4}, {:.4}, {:.4})", self.x, self.y, self.theta)
    }
}

/// Homogeneous 3×3 planar rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    m: [[f64; 3]; 3],
}

impl Default for Transform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_parts(angle: f64, translation: Point2) -> Self {
        let (s, c) = angle.sin_cos();
        Transform {
            m: [
                [c, -s, translation.x],
                [s, c, translation.y],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn translation(x: f64, y: f64) -> Self {
        Self::from_parts(0.0, Point2::new(x, y))
    }

    pub fn rotation(angle: f64) -> Self {
        Self::from_parts(angle, Point2::ZERO)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn translation_part(&self) -> Point2 {
        Point2::new(self.m[0][2], self.m[1][2])
    }

    pub fn angle(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0])
    }

    /// Rigid-transform validity: orthonormal rotation block with unit
    /// determinant and an exact `[0, 0, 1]` bottom row.
    pub fn is_valid(&self, tol: f64) -> bool {
        let [r00, r01, _] = self.m[0];
        let [r10, r11, _] = self.m[1];
        let det = r00 * r11 - r01 * r10;
        self.m[2] == [0.0, 0.0, 1.0]
            && (r00 * r00 + r10 * r10 - 1.0).abs() <= tol
            && (r01 * r01 + r11 * r11 - 1.0).abs() <= tol
            && (r00 * r01 + r10 * r11).abs() <= tol
            && (det - 1.0).abs() <= tol
            && self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        transform_point(self, p)
    }

    pub fn inverse(&self) -> Transform {
        invert(self)
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Transform) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        compose(&self, &rhs)
    }
}

pub fn pose_to_transform(p: &Pose) -> Transform {
    Transform::from_parts(p.theta, p.position())
}

/// Closed-form rigid inverse: `[Rᵀ, −Rᵀt]`.
pub fn invert(t: &Transform) -> Transform {
    let m = &t.m;
    let (tx, ty) = (m[0][2], m[1][2]);
    Transform {
        m: [
            [m[0][0], m[1][0], -(m[0][0] * tx + m[1][0] * ty)],
            [m[0][1], m[1][1], -(m[0][1] * tx + m[1][1] * ty)],
            [0.0, 0.0, 1.0],
        ],
    }
}

/// Homogeneous matrix product `a · b`.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate().take(2) {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a.m[i][k] * b.m[k][j]).sum();
        }
    }
    out[2] = [0.0, 0.0, 1.0];
    Transform { m: out }
}

pub fn transform_point(t: &Transform, p: &Point2) -> Point2 {
    let m = &t.m;
    Point2::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2],
        m[1][0] * p.x + m[1][1] * p.y + m[1][2],
    )
}

/// Map taking coordinates expressed in frame `from` into frame `to`:
/// `invert(T_to) · T_from`.
///
/// With `from` the pose at t+1 and `to` the pose at t this is the per-step
/// frame change used to carry a goal backward through a recorded sequence.
pub fn relative_transform(from: &Pose, to: &Pose) -> Transform {
    compose(&invert(&pose_to_transform(to)), &pose_to_transform(from))
}

/// Express a world point in the observer's local frame: `R(θ)ᵀ (p − t)`.
pub fn to_local(observer: &Pose, world_point: &Point2) -> Point2 {
    let (s, c) = observer.theta.sin_cos();
    let dx = world_point.x - observer.x;
    let dy = world_point.y - observer.y;
    Point2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`to_local`].
pub fn to_world(observer: &Pose, local_point: &Point2) -> Point2 {
    transform_point(&pose_to_transform(observer), local_point)
}
