//! Trajectory representations compared against each other: discrete
//! waypoints, an interpolating natural cubic spline and the clamped cubic
//! B-spline. All three decode the same eight-anchor output.

use crate::geom::Vec3;
use crate::spline::{ControlPointSet, SplineError, SplineSpec};
use crate::trajectory::{arclength_discretize, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Anchors predicted per plan, shared by every representation.
pub const ANCHOR_COUNT: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ReprError {
    #[error("expected {ANCHOR_COUNT} anchors, got {0}")]
    AnchorCount(usize),
    #[error("consecutive anchors {i} and {next} coincide", i = .0, next = .0 + 1)]
    DegenerateNode(usize),
    #[error("need at least 2 output samples, got {0}")]
    TooFewSamples(usize),
    #[error("unknown representation {0:?} (expected waypoints, cubic or bspline)")]
    UnknownKind(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

pub type Result<T> = std::result::Result<T, ReprError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    Waypoints,
    #[serde(rename = "cubic")]
    InterpolatingCubic,
    #[serde(rename = "bspline")]
    BSpline,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 3] =
        [RepresentationKind::Waypoints, RepresentationKind::InterpolatingCubic, RepresentationKind::BSpline];

    pub fn as_str(&self) -> &'static str {
        match self {
            RepresentationKind::Waypoints => "waypoints",
            RepresentationKind::InterpolatingCubic => "cubic",
            RepresentationKind::BSpline => "bspline",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            RepresentationKind::Waypoints => 0,
            RepresentationKind::InterpolatingCubic => 1,
            RepresentationKind::BSpline => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn anchor_count(&self) -> usize {
        ANCHOR_COUNT
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepresentationKind {
    type Err = ReprError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waypoints" => Ok(RepresentationKind::Waypoints),
            "cubic" => Ok(RepresentationKind::InterpolatingCubic),
            "bspline" => Ok(RepresentationKind::BSpline),
            other => Err(ReprError::UnknownKind(other.to_string())),
        }
    }
}

/// Eight robot-frame anchors; their meaning depends on the representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<Vec3>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Vec3>) -> Result<Self> {
        if anchors.len() != ANCHOR_COUNT {
            return Err(ReprError::AnchorCount(anchors.len()));
        }
        Ok(Self { anchors })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let cps = ControlPointSet::from_flat(flat)?;
        Self::new(cps.points)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.anchors
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.anchors
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.anchors.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn as_control_points(&self) -> ControlPointSet {
        ControlPointSet::new(self.anchors.clone())
    }

    /// Unit direction from anchor 0 to anchor 1 in the plane, if defined.
    pub fn initial_heading(&self) -> Option<crate::geom::Vec2> {
        let d = crate::geom::xy(&(self.anchors[1] - self.anchors[0]));
        let n = d.norm();
        (n > 1e-9).then(|| d / n)
    }
}

impl From<ControlPointSet> for AnchorSet {
    fn from(cps: ControlPointSet) -> Self {
        Self::new(cps.points).expect("eight control points")
    }
}

/// Polyline through the anchors.
pub fn decode_waypoints(anchors: &AnchorSet) -> Trajectory {
    Trajectory::from_polyline(anchors.points().to_vec())
}

/// Natural cubic spline through a sequence of nodes, parameterized by
/// cumulative chord length.
#[derive(Debug, Clone)]
pub struct NaturalCubic {
    t: Vec<f64>,
    nodes: Vec<Vec3>,
    second: Vec<Vec3>,
}

impl NaturalCubic {
    pub fn through(nodes: &[Vec3]) -> Result<Self> {
        let n = nodes.len();
        let mut t = vec![0.0; n];
        for i in 1..n {
            let h = (nodes[i] - nodes[i - 1]).norm();
            if h < 1e-9 {
                return Err(ReprError::DegenerateNode(i - 1));
            }
            t[i] = t[i - 1] + h;
        }
        let mut second = vec![Vec3::zeros(); n];
        if n > 2 {
            // Thomas algorithm on the interior equations, M_0 = M_{n-1} = 0.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![Vec3::zeros(); k];
            for r in 0..k {
                let i = r + 1;
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[r] = 2.0 * (h0 + h1);
                upper[r] = h1;
                rhs[r] = ((nodes[i + 1] - nodes[i]) / h1 - (nodes[i] - nodes[i - 1]) / h0) * 6.0;
            }
            for r in 1..k {
                let lower = t[r + 1] - t[r];
                let w = lower / diag[r - 1];
                diag[r] -= w * upper[r - 1];
                let prev = rhs[r - 1];
                rhs[r] -= prev * w;
            }
            second[k] = rhs[k - 1] / diag[k - 1];
            for r in (0..k - 1).rev() {
                second[r + 1] = (rhs[r] - second[r + 2] * upper[r]) / diag[r];
            }
        }
        Ok(Self { t, nodes: nodes.to_vec(), second })
    }

    pub fn domain(&self) -> (f64, f64) {
        (0.0, *self.t.last().unwrap())
    }

    pub fn knots(&self) -> &[f64] {
        &self.t
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        let n = self.t.len();
        let t = t.clamp(0.0, self.t[n - 1]);
        let i = self.t.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        self.nodes[i] * a
            + self.nodes[i + 1] * b
            + (self.second[i] * (a * a * a - a) + self.second[i + 1] * (b * b * b - b)) * (h * h / 6.0)
    }
}

/// Interpolating cubic through all anchors, sampled at `m` arc-length
/// equidistant points.
pub fn decode_interpolating_cubic(anchors: &AnchorSet, m: usize) -> Result<Trajectory> {
    if m < 2 {
        return Err(ReprError::TooFewSamples(m));
    }
    let spline = NaturalCubic::through(anchors.points())?;
    let (lo, hi) = spline.domain();
    let dense = 200 * (ANCHOR_COUNT - 1);
    Ok(arclength_discretize(|t| spline.eval(t), lo, hi, dense, m)
        .unwrap_or_else(|| Trajectory::stationary(anchors.points()[0], m)))
}

/// Anchors as the control points of the eight-point clamped cubic.
pub fn decode_bspline(anchors: &AnchorSet, m: usize) -> Result<Trajectory> {
    if m < 2 {
        return Err(ReprError::TooFewSamples(m));
    }
    Ok(SplineSpec::cubic8().discretize_arclength(&anchors.as_control_points(), m)?)
}

/// Decode with the selected representation to `m` arc-length samples.
pub fn decode(kind: RepresentationKind, anchors: &AnchorSet, m: usize) -> Result<Trajectory> {
    match kind {
        RepresentationKind::Waypoints => {
            if m < 2 {
                return Err(ReprError::TooFewSamples(m));
            }
            Ok(decode_waypoints(anchors).resampled(m))
        }
        RepresentationKind::InterpolatingCubic => decode_interpolating_cubic(anchors, m),
        RepresentationKind::BSpline => decode_bspline(anchors, m),
    }
}

/// Uniform sample from the disk of radius `radius` in the xy-plane.
pub fn random_disk_offset(rng: &mut impl Rng, radius: f64) -> Vec3 {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    Vec3::new(r * theta.cos(), r * theta.sin(), 0.0)
}

/// Distance between two curves compared at equal arc length `s`, for
/// `s = 0, ds, 2 ds, ...` up to `s_max` (and within both curves).
pub fn arclength_displacement(clean: &Trajectory, perturbed: &Trajectory, ds: f64, s_max: f64) -> Vec<(f64, f64)> {
    let limit = s_max.min(clean.total_length()).min(perturbed.total_length());
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * ds;
        if s > limit + 1e-12 {
            break;
        }
        out.push((s, (clean.point_at(s) - perturbed.point_at(s)).norm()));
        k += 1;
    }
    out
}
