//! Geometric candidate scoring: discounted clearance hinge, path length and
//! terminal goal distance, combined by a weighted sum and minimized.

use crate::esdf::SignedDistance;
use crate::geom::{xy, Vec2};
use crate::trajectory::Trajectory;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CriticError {
    #[error("no candidates to score")]
    Empty,
    #[error("invalid critic configuration: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub gamma: f64,
    pub d_safe: f64,
    /// Weights of the safety, length and goal terms.
    pub lambda: [f64; 3],
    /// Samples per candidate trajectory.
    pub m: usize,
    pub reject: bool,
    /// Clearance below which a near-field sample rejects the candidate.
    pub reject_clearance: f64,
    /// Near field: this fraction of the arc length, but at least
    /// `reject_min_length`.
    pub reject_fraction: f64,
    pub reject_min_length: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            d_safe: 0.3,
            lambda: [10.0, 1.0, 2.0],
            m: 32,
            reject: true,
            reject_clearance: 0.25,
            reject_fraction: 1.0 / 3.0,
            reject_min_length: 0.3,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<(), CriticError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CriticError::Invalid("gamma must lie in (0, 1)"));
        }
        if !(self.d_safe > 0.0) {
            return Err(CriticError::Invalid("d_safe must be positive"));
        }
        if self.lambda.iter().any(|l| !(*l > 0.0)) {
            return Err(CriticError::Invalid("weights must be positive"));
        }
        if self.m < 2 {
            return Err(CriticError::Invalid("need at least 2 samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_safe: f64,
    pub j_len: f64,
    pub j_goal: f64,
    /// Infinite when the candidate was rejected.
    pub j_total: f64,
    pub clearance: Vec<f64>,
    pub rejected: bool,
}

/// Discount-normalized hinge on clearance deficits.
pub fn safety_cost_from_clearance(clearance: &[f64], gamma: f64, d_safe: f64) -> f64 {
    let mut w = 1.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for e in clearance {
        num += w * (d_safe - e).max(0.0);
        den += w;
        w *= gamma;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn clearance_trace(field: &dyn SignedDistance, traj: &Trajectory) -> Vec<f64> {
    traj.points.iter().map(|p| field.distance(xy(p))).collect()
}

pub fn safety_cost(field: &dyn SignedDistance, traj: &Trajectory, cfg: &CriticConfig) -> f64 {
    safety_cost_from_clearance(&clearance_trace(field, traj), cfg.gamma, cfg.d_safe)
}

pub fn length_cost(traj: &Trajectory) -> f64 {
    traj.chord_length()
}

pub fn goal_cost(traj: &Trajectory, goal: Vec2) -> f64 {
    (xy(&traj.end()) - goal).norm()
}

/// Full breakdown for one candidate.
pub fn score(field: &dyn SignedDistance, traj: &Trajectory, goal: Vec2, cfg: &CriticConfig) -> CostBreakdown {
    let clearance = clearance_trace(field, traj);
    let j_safe = safety_cost_from_clearance(&clearance, cfg.gamma, cfg.d_safe);
    let j_len = length_cost(traj);
    let j_goal = goal_cost(traj, goal);
    let mut rejected = false;
    if cfg.reject && !clearance.is_empty() {
        // A robot already closer than the threshold may still move as long
        // as it does not get closer.
        let threshold = cfg.reject_clearance.min(clearance[0] - 1e-3);
        let window = (traj.total_length() * cfg.reject_fraction).max(cfg.reject_min_length);
        rejected = clearance
            .iter()
            .zip(&traj.arc_length)
            .skip(1)
            .any(|(e, s)| *s <= window + 1e-12 && *e < threshold);
    }
    let [l1, l2, l3] = cfg.lambda;
    let j_total = if rejected { f64::INFINITY } else { l1 * j_safe + l2 * j_len + l3 * j_goal };
    CostBreakdown { j_safe, j_len, j_goal, j_total, clearance, rejected }
}

/// Rejected breakdown for a candidate that could not be decoded.
pub fn invalid_breakdown() -> CostBreakdown {
    CostBreakdown {
        j_safe: 0.0,
        j_len: 0.0,
        j_goal: 0.0,
        j_total: f64::INFINITY,
        clearance: Vec::new(),
        rejected: true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// `None` when every candidate was rejected.
    pub index: Option<usize>,
    pub breakdowns: Vec<CostBreakdown>,
}

/// Index of the lowest total cost (lowest index on ties).
pub fn argmin_total(breakdowns: &[CostBreakdown]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, b) in breakdowns.iter().enumerate() {
        if !b.j_total.is_finite() {
            continue;
        }
        match best {
            Some(j) if breakdowns[j].j_total <= b.j_total => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Score candidates (given in the same frame as `field` and `goal`) and pick the best.
pub fn select_best(
    field: &dyn SignedDistance,
    candidates: &[Trajectory],
    goal: Vec2,
    cfg: &CriticConfig,
) -> Result<Selection, CriticError> {
    if candidates.is_empty() {
        return Err(CriticError::Empty);
    }
    let breakdowns: Vec<CostBreakdown> = candidates.par_iter().map(|t| score(field, t, goal, cfg)).collect();
    Ok(Selection { index: argmin_total(&breakdowns), breakdowns })
}

pub const CSV_HEADER: &str = "step,candidate,j_safe,j_len,j_goal,j_total,chosen";

/// CSV rows (without header) for one planning step.
pub fn breakdown_rows(step: usize, sel: &Selection) -> String {
    let mut s = String::new();
    for (i, b) in sel.breakdowns.iter().enumerate() {
        let _ = writeln!(
            s,
            "{step},{i},{},{},{},{},{}",
            b.j_safe,
            b.j_len,
            b.j_goal,
            b.j_total,
            (sel.index == Some(i)) as u8
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdf::build_esdf;
    use crate::geom::{lift, Vec3};
    use crate::world::OccupancyGrid;

    struct Constant(f64);
    impl SignedDistance for Constant {
        fn distance(&self, _p: Vec2) -> f64 {
            self.0
        }
    }

    #[test]
    fn hand_evaluated_safety_cost() {
        let c = safety_cost_from_clearance(&[1.0, 1.0, 1.0, 0.1], 0.9, 0.3);
        let expect = 0.9f64.powi(3) * 0.2 / (1.0 + 0.9 + 0.81 + 0.729);
        assert!((c - expect).abs() < 1e-15);
        assert!((c - 0.04238).abs() < 1e-4);
    }

    #[test]
    fn hinge_edges() {
        assert_eq!(safety_cost_from_clearance(&[0.3, 0.5, 2.0], 0.9, 0.3), 0.0);
        assert!((safety_cost_from_clearance(&[0.0; 7], 0.9, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn length_and_goal() {
        let t = Trajectory::from_polyline(vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)]);
        assert_eq!(length_cost(&t), 3.0);
        assert_eq!(goal_cost(&t, Vec2::new(3.0, 0.0)), 0.0);
        let arc: Vec<Vec3> = (0..64)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 63.0;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        assert!((length_cost(&Trajectory::from_polyline(arc)) - std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn prefers_clear_candidate() {
        let mut g = OccupancyGrid::walled_room(6.0, 0.05);
        g.fill_rect(Vec2::new(2.8, 2.8), Vec2::new(3.2, 3.2), true);
        let e = build_esdf(&g).unwrap();
        let line = |y: f64| {
            Trajectory::from_polyline((0..32).map(|k| lift(Vec2::new(1.0 + 4.0 * k as f64 / 31.0, y))).collect())
        };
        let through = line(3.0);
        let clear = line(4.5);
        for l1 in [0.01, 1.0, 10.0] {
            let cfg = CriticConfig { lambda: [l1, 1.0, 2.0], reject: false, ..Default::default() };
            let goal = Vec2::new(5.0, 3.75);
            let sel = select_best(&e, &[through.clone(), clear.clone()], goal, &cfg).unwrap();
            assert_eq!(sel.index, Some(1), "lambda1 = {l1}");
        }
    }

    #[test]
    fn ties_and_singletons() {
        let t = Trajectory::from_polyline(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]);
        let cfg = CriticConfig::default();
        let f = Constant(1.0);
        assert_eq!(select_best(&f, &[t.clone(), t.clone()], Vec2::new(2.0, 0.0), &cfg).unwrap().index, Some(0));
        assert_eq!(select_best(&f, &[t.clone()], Vec2::new(2.0, 0.0), &cfg).unwrap().index, Some(0));
        assert_eq!(select_best(&f, &[], Vec2::zeros(), &cfg), Err(CriticError::Empty));
    }

    #[test]
    fn rejection_is_relative_to_start() {
        let t = Trajectory::from_polyline((0..10).map(|k| Vec3::new(0.1 * k as f64, 0.0, 0.0)).collect());
        let cfg = CriticConfig::default();
        // Everything at 0.22 m: already too close, but not getting closer.
        assert!(!score(&Constant(0.22), &t, Vec2::zeros(), &cfg).rejected);
        // Clearance falling from 0.5 m to 0.05 m within the first 0.3 m.
        struct Ramp;
        impl SignedDistance for Ramp {
            fn distance(&self, p: Vec2) -> f64 {
                (0.5 - 1.5 * p.x).max(0.05)
            }
        }
        assert!(score(&Ramp, &t, Vec2::zeros(), &cfg).rejected);
    }

    #[test]
    fn config_validation() {
        assert!(CriticConfig::default().validate().is_ok());
        assert!(CriticConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(CriticConfig { m: 1, ..Default::default() }.validate().is_err());
    }
}
