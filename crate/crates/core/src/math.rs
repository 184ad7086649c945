//! Small fixed-size vector and quaternion helpers.
//!
//! Everything in the engine works on `[f64; 3]` / `[f64; 2]` arrays so that the
//! serialized form (arrays of numbers) and the in-memory form coincide.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm2(v: Vec2) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

pub fn dist2(a: Vec2, b: Vec2) -> f64 {
    norm2([a[0] - b[0], a[1] - b[1]])
}

/// Unit quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quat(pub [f64; 4]);

impl Quat {
    pub const IDENTITY: Quat = Quat([1.0, 0.0, 0.0, 0.0]);

    /// Rotation about the vertical (z) axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (yaw * 0.5).sin_cos();
        Quat([c, 0.0, 0.0, s])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= 1e-9
    }

    /// Heading of the rotated local x axis projected on the table plane.
    pub fn yaw(&self) -> f64 {
        let [w, x, y, z] = self.0;
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let [w, x, y, z] = self.0;
        // v' = v + 2w(u × v) + 2u × (u × v), u = (x, y, z)
        let u = [x, y, z];
        let t = cross(u, v);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let ut = cross(u, t);
        [
            v[0] + w * t[0] + ut[0],
            v[1] + w * t[1] + ut[1],
            v[2] + w * t[2] + ut[2],
        ]
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Horizontal half-extents of a box with half sizes `(hx, hy)` after a yaw rotation.
pub fn rotated_half_extents(hx: f64, hy: f64, yaw: f64) -> Vec2 {
    let (s, c) = yaw.sin_cos();
    let (s, c) = (s.abs(), c.abs());
    [c * hx + s * hy, s * hx + c * hy]
}
