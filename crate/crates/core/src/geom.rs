//! Small planar geometry helpers shared by the world, planner and data modules.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Planar pose: world-frame position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self { x: position.x, y: position.y, heading: wrap_angle(heading) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World point into this pose's body frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.position();
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Body-frame point into the world frame.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y) + self.position()
    }

    pub fn rotate_to_local(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }

    pub fn rotate_to_world(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }
}

pub fn xy(p: &Vec3) -> Vec2 {
    Vec2::new(p.x, p.y)
}

pub fn lift(p: Vec2) -> Vec3 {
    Vec3::new(p.x, p.y, 0.0)
}

/// Cumulative chord lengths along a polyline, starting at 0.
pub fn cumulative_lengths(points: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += (p - points[i - 1]).norm();
        }
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along a polyline with precomputed cumulative lengths.
pub fn point_at_length(points: &[Vec3], cum: &[f64], s: f64) -> Vec3 {
    debug_assert_eq!(points.len(), cum.len());
    if points.len() == 1 || s <= 0.0 {
        return points[0];
    }
    let total = *cum.last().unwrap();
    if s >= total {
        return *points.last().unwrap();
    }
    let j = cum.partition_point(|&c| c <= s).clamp(1, points.len() - 1);
    let seg = cum[j] - cum[j - 1];
    if seg <= 0.0 {
        return points[j];
    }
    let t = (s - cum[j - 1]) / seg;
    points[j - 1] + (points[j] - points[j - 1]) * t
}

/// Resample a polyline at `count` points equally spaced in arc length.
pub fn resample_polyline(points: &[Vec3], count: usize) -> Vec<Vec3> {
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap_or(&0.0);
    if count < 2 {
        return vec![points[0]];
    }
    (0..count)
        .map(|j| point_at_length(points, &cum, total * j as f64 / (count - 1) as f64))
        .collect()
}
