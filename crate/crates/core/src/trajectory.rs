use crate::geom::{cumulative_lengths, point_at_length, Vec3};
use serde::{Deserialize, Serialize};

/// A discretized path: positions with their arc length from the start.
///
/// `params` holds the generating curve parameter of each sample when the
/// trajectory came from a parametric curve (empty for raw polylines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Vec3>,
    pub arc_length: Vec<f64>,
    pub params: Vec<f64>,
    /// Set when the source curve has (near) zero length.
    pub degenerate: bool,
}

impl Trajectory {
    /// Polyline through `points`, arc length measured along the chords.
    pub fn from_polyline(points: Vec<Vec3>) -> Self {
        let arc_length = cumulative_lengths(&points);
        let degenerate = arc_length.last().copied().unwrap_or(0.0) < 1e-9;
        Self { points, arc_length, params: Vec::new(), degenerate }
    }

    /// `count` copies of a single point, flagged degenerate.
    pub fn stationary(p: Vec3, count: usize) -> Self {
        Self {
            points: vec![p; count],
            arc_length: vec![0.0; count],
            params: vec![0.0; count],
            degenerate: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.arc_length.last().copied().unwrap_or(0.0)
    }

    /// Sum of distances between consecutive samples.
    pub fn chord_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn start(&self) -> Vec3 {
        self.points[0]
    }

    pub fn end(&self) -> Vec3 {
        *self.points.last().unwrap()
    }

    /// Interpolated position at arc length `s` (clamped to the ends).
    pub fn point_at(&self, s: f64) -> Vec3 {
        point_at_length(&self.points, &self.arc_length, s)
    }

    /// Resample at `count` samples equally spaced in arc length.
    pub fn resampled(&self, count: usize) -> Trajectory {
        if self.degenerate {
            return Trajectory::stationary(self.start(), count);
        }
        let total = self.total_length();
        let mut points = Vec::with_capacity(count);
        let mut arc = Vec::with_capacity(count);
        for j in 0..count {
            let s = if count > 1 { total * j as f64 / (count - 1) as f64 } else { 0.0 };
            points.push(self.point_at(s));
            arc.push(s);
        }
        Trajectory { points, arc_length: arc, params: Vec::new(), degenerate: false }
    }

    /// Apply a point map (e.g. a frame change) to every sample.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Trajectory {
        Trajectory {
            points: self.points.iter().map(f).collect(),
            arc_length: self.arc_length.clone(),
            params: self.params.clone(),
            degenerate: self.degenerate,
        }
    }
}

/// Sample a parametric curve at `m` points equally spaced in arc length.
///
/// Arc length is accumulated piecewise-linearly over `dense` uniform
/// parameter steps on `[lo, hi]` and inverted by linear interpolation.
/// Returns `None` when the curve is shorter than 1e-9.
pub fn arclength_discretize(
    eval: impl Fn(f64) -> Vec3,
    lo: f64,
    hi: f64,
    dense: usize,
    m: usize,
) -> Option<Trajectory> {
    let us: Vec<f64> = (0..=dense).map(|k| lo + (hi - lo) * k as f64 / dense as f64).collect();
    let pts: Vec<Vec3> = us.iter().map(|&u| eval(u)).collect();
    let mut cum = vec![0.0; pts.len()];
    for k in 1..pts.len() {
        cum[k] = cum[k - 1] + (pts[k] - pts[k - 1]).norm();
    }
    let total = cum[dense];
    if total < 1e-9 {
        return None;
    }
    let mut points = Vec::with_capacity(m);
    let mut arc = Vec::with_capacity(m);
    let mut params = Vec::with_capacity(m);
    let mut k = 0;
    for j in 0..m {
        let (s, u) = if j == 0 {
            (0.0, lo)
        } else if j == m - 1 {
            (total, hi)
        } else {
            let s = total * j as f64 / (m - 1) as f64;
            while k + 1 < dense && cum[k + 1] <= s {
                k += 1;
            }
            let seg = cum[k + 1] - cum[k];
            let t = if seg > 0.0 { (s - cum[k]) / seg } else { 0.0 };
            (s, us[k] + t * (us[k + 1] - us[k]))
        };
        points.push(eval(u));
        arc.push(s);
        params.push(u);
    }
    Some(Trajectory { points, arc_length: arc, params, degenerate: false })
}
