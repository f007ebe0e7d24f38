//! Expert demonstrations: grid A* paths, sub-trajectory resampling, label
//! fitting for each representation, and the binary dataset format.

use crate::esdf::{build_esdf, EsdfGrid};
use crate::geom::{cumulative_lengths, lift, point_at_length, resample_polyline, xy, Pose2, Vec2, Vec3};
use crate::repr::{AnchorSet, RepresentationKind, ANCHOR_COUNT};
use crate::seed::{config_hash, derive_seed, streams};
use crate::spline::{chord_length_params, FitResult, SplineSpec};
use crate::world::{
    generate_world, raycast_scan, NoiseParams, OccupancyGrid, RobotState, SensorConfig, WorldError, WorldParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_MAGIC: &[u8; 4] = b"SDPD";
pub const DATASET_VERSION: u32 = 1;
/// Spacing of the fixed-step waypoint labels, meters.
pub const WAYPOINT_SPACING: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("start or goal lies inside an obstacle")]
    EndpointBlocked,
    #[error("no collision-free path between start and goal")]
    NoPath,
    #[error("episode of {length:.3} m is shorter than the {min:.3} m minimum")]
    TooShort { length: f64, min: f64 },
    #[error("could not build episode {0} after repeated world draws")]
    EpisodeFailed(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad dataset: {0}")]
    Format(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T> = std::result::Result<T, ExpertError>;

/// Sequence of grid cells plus the number of straight and diagonal moves.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<(i64, i64)>,
    pub straight: usize,
    pub diagonal: usize,
}

impl GridPath {
    /// Path cost in cells.
    pub fn cost(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const MOVES: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Shortest 8-connected path over unblocked cells, without cutting corners.
/// With `heuristic` false this is plain Dijkstra.
pub fn grid_search(
    blocked: &[bool],
    width: usize,
    height: usize,
    start: (i64, i64),
    goal: (i64, i64),
    heuristic: bool,
) -> Option<GridPath> {
    weighted_search(blocked, None, width, height, start, goal, heuristic)
}

/// Like [`grid_search`], but a move into cell `i` costs its length times
/// `cell_cost[i]` (all entries must be at least 1 to keep the heuristic
/// admissible).
pub fn weighted_search(
    blocked: &[bool],
    cell_cost: Option<&[f64]>,
    width: usize,
    height: usize,
    start: (i64, i64),
    goal: (i64, i64),
    heuristic: bool,
) -> Option<GridPath> {
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < width as i64 && y < height as i64;
    let idx = |x: i64, y: i64| y as usize * width + x as usize;
    let free = |x: i64, y: i64| inside(x, y) && !blocked[idx(x, y)];
    if !free(start.0, start.1) || !free(goal.0, goal.1) {
        return None;
    }
    let h = |x: i64, y: i64| {
        if !heuristic {
            return 0.0;
        }
        let dx = (x - goal.0).abs() as f64;
        let dy = (y - goal.1).abs() as f64;
        dx.max(dy) - dx.min(dy) + SQRT_2 * dx.min(dy)
    };
    let n = width * height;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let s = idx(start.0, start.1);
    g[s] = 0.0;
    heap.push(Open { f: h(start.0, start.1), idx: s });
    let target = idx(goal.0, goal.1);
    while let Some(Open { idx: cur, .. }) = heap.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        if cur == target {
            break;
        }
        let (x, y) = ((cur % width) as i64, (cur / width) as i64);
        for (dx, dy) in MOVES {
            let (nx, ny) = (x + dx, y + dy);
            if !free(nx, ny) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && (!free(x + dx, y) || !free(x, y + dy)) {
                continue;
            }
            let ni = idx(nx, ny);
            let step = if diagonal { SQRT_2 } else { 1.0 };
            let cand = g[cur] + step * cell_cost.map_or(1.0, |c| c[ni]);
            if cand < g[ni] {
                g[ni] = cand;
                parent[ni] = cur;
                heap.push(Open { f: cand + h(nx, ny), idx: ni });
            }
        }
    }
    if !closed[target] {
        return None;
    }
    let mut cells = vec![goal];
    let mut cur = target;
    while cur != s {
        cur = parent[cur];
        cells.push(((cur % width) as i64, (cur / width) as i64));
    }
    cells.reverse();
    let diagonal = cells.windows(2).filter(|w| w[0].0 != w[1].0 && w[0].1 != w[1].1).count();
    Some(GridPath { straight: cells.len() - 1 - diagonal, diagonal, cells })
}

/// True if every point along `a -> b` (sampled at a quarter cell) lies in an
/// unblocked cell.
pub fn segment_clear(grid: &OccupancyGrid, blocked: &[bool], a: Vec2, b: Vec2) -> bool {
    let len = (b - a).norm();
    let n = (len / (grid.resolution / 4.0)).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let p = a + (b - a) * (k as f64 / n as f64);
        let (ix, iy) = grid.cell_of(p);
        grid.in_bounds(ix, iy) && !blocked[iy as usize * grid.width + ix as usize]
    })
}

/// Greedy line-of-sight shortcutting: from each kept vertex jump to the
/// farthest later vertex that is directly visible.
pub fn shortcut(grid: &OccupancyGrid, blocked: &[bool], path: &[Vec2]) -> Vec<Vec2> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    let mut i = 0;
    while i < path.len() - 1 {
        let mut j = path.len() - 1;
        while j > i + 1 && !segment_clear(grid, blocked, path[i], path[j]) {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

/// Shortcutting that only accepts a jump when the straight segment keeps at
/// least as much clearance as the skipped vertices (capped at `preferred`).
pub fn shortcut_with_clearance(
    grid: &OccupancyGrid,
    blocked: &[bool],
    field: &EsdfGrid,
    path: &[Vec2],
    preferred: f64,
) -> Vec<Vec2> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let clearance: Vec<f64> = path.iter().map(|p| field.query(*p).value).collect();
    let keeps = |i: usize, j: usize| {
        let need = clearance[i..=j].iter().copied().fold(preferred, f64::min) - 0.5 * grid.resolution;
        let (a, b) = (path[i], path[j]);
        let n = ((b - a).norm() / (grid.resolution / 2.0)).ceil().max(1.0) as usize;
        (0..=n).all(|k| field.query(a + (b - a) * (k as f64 / n as f64)).value >= need)
    };
    let mut out = vec![path[0]];
    let mut i = 0;
    while i < path.len() - 1 {
        let mut j = path.len() - 1;
        while j > i + 1 && !(segment_clear(grid, blocked, path[i], path[j]) && keeps(i, j)) {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

pub fn polyline_length(path: &[Vec2]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Inflation that keeps a disc of `robot_radius` clear of every occupied
/// cell for any point inside an unblocked cell.
pub fn robot_inflation(grid: &OccupancyGrid, robot_radius: f64) -> f64 {
    robot_radius + grid.resolution * FRAC_1_SQRT_2
}

fn cell_polyline(grid: &OccupancyGrid, gp: &GridPath, start: Vec2, goal: Vec2) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = gp.cells.iter().map(|&(x, y)| grid.cell_center(x, y)).collect();
    pts[0] = start;
    *pts.last_mut().unwrap() = goal;
    if pts.len() == 1 {
        pts.push(goal);
    }
    pts
}

fn path_on(grid: &OccupancyGrid, blocked: &[bool], start: Vec2, goal: Vec2, heuristic: bool) -> Option<Vec<Vec2>> {
    let gp = grid_search(blocked, grid.width, grid.height, grid.cell_of(start), grid.cell_of(goal), heuristic)?;
    Some(shortcut(grid, blocked, &cell_polyline(grid, &gp, start, goal)))
}

/// Length of the shortest robot-feasible route (Dijkstra, then line-of-sight
/// shortcutting). `None` when disconnected.
pub fn shortest_path_length(grid: &OccupancyGrid, start: Vec2, goal: Vec2, robot_radius: f64) -> Option<f64> {
    if (goal - start).norm() < 1e-12 {
        return Some(0.0);
    }
    let blocked = grid.inflated(robot_inflation(grid, robot_radius));
    path_on(grid, &blocked, start, goal, false).map(|p| polyline_length(&p))
}

/// One expert demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub world_seed: u64,
    pub start: Vec2,
    pub goal: Vec2,
    pub expert_path: Vec<Vec2>,
    pub length: f64,
}

/// Soft preference for clearance in the expert search: entering a cell with
/// clearance `d` costs `1 + weight * max(0, preferred - d) / preferred` per
/// unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearanceCost {
    pub weight: f64,
    pub preferred: f64,
}

/// A* expert with obstacles inflated by `robot_radius + margin`. Falls back
/// to the bare robot inflation when the margin closes every route.
pub fn astar_expert(
    grid: &OccupancyGrid,
    start: Vec2,
    goal: Vec2,
    robot_radius: f64,
    margin: f64,
    world_seed: u64,
) -> Result<Episode> {
    astar_expert_weighted(grid, start, goal, robot_radius, margin, None, world_seed)
}

/// [`astar_expert`] with an optional clearance cost; shortcuts then never
/// trade clearance for length.
pub fn astar_expert_weighted(
    grid: &OccupancyGrid,
    start: Vec2,
    goal: Vec2,
    robot_radius: f64,
    margin: f64,
    clearance: Option<ClearanceCost>,
    world_seed: u64,
) -> Result<Episode> {
    for p in [start, goal] {
        let (ix, iy) = grid.cell_of(p);
        if grid.occupied(ix, iy) {
            return Err(ExpertError::EndpointBlocked);
        }
    }
    let base = robot_inflation(grid, robot_radius);
    let mut radii = vec![robot_radius + margin];
    if robot_radius + margin > base {
        radii.push(base);
    }
    let weighted = match clearance {
        Some(c) if c.weight > 0.0 && c.preferred > 0.0 => {
            let field = build_esdf(grid).map_err(|_| ExpertError::NoPath)?;
            let cost: Vec<f64> = field
                .values()
                .iter()
                .map(|d| 1.0 + c.weight * ((c.preferred - d) / c.preferred).max(0.0))
                .collect();
            Some((field, cost, c.preferred))
        }
        _ => None,
    };
    for r in radii {
        let blocked = grid.inflated(r);
        let path = match &weighted {
            None => path_on(grid, &blocked, start, goal, true),
            Some((field, cost, preferred)) => {
                weighted_search(&blocked, Some(cost), grid.width, grid.height, grid.cell_of(start), grid.cell_of(goal), true)
                    .map(|gp| {
                        let pts = cell_polyline(grid, &gp, start, goal);
                        shortcut_with_clearance(grid, &blocked, field, &pts, *preferred)
                    })
            }
        };
        if let Some(path) = path {
            let length = polyline_length(&path);
            return Ok(Episode { world_seed, start, goal, expert_path: path, length });
        }
    }
    Err(ExpertError::NoPath)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Extra clearance beyond the robot radius kept by expert paths.
    pub clearance_margin: f64,
    /// Soft clearance preference of the expert search (weight 0 disables it).
    pub clearance_cost: ClearanceCost,
    pub horizon_min: f64,
    pub horizon_max: f64,
    /// Context goals farther than this are pulled in along their direction.
    pub goal_cap: f64,
    pub null_fraction: f64,
    /// Uniform perturbation of the sample frame heading around the path
    /// tangent, radians.
    pub heading_jitter: f64,
    pub min_episode_length: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            clearance_margin: 0.1,
            clearance_cost: ClearanceCost { weight: 2.0, preferred: 0.6 },
            horizon_min: 2.0,
            horizon_max: 6.0,
            goal_cap: 6.0,
            null_fraction: 0.1,
            heading_jitter: 0.4,
            min_episode_length: 2.0,
        }
    }
}

/// Start pose and robot-frame segment of a sub-trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTrajectory {
    pub frame: Pose2,
    pub segment: Vec<Vec3>,
    pub start_arc: f64,
}

fn path3(ep: &Episode) -> Vec<Vec3> {
    ep.expert_path.iter().map(|p| lift(*p)).collect()
}

/// Unit path direction at arc length `s` (looking a short distance ahead).
fn tangent_at(points: &[Vec3], cum: &[f64], s: f64) -> Vec2 {
    let total = *cum.last().unwrap();
    let a = point_at_length(points, cum, s.min(total - 1e-9));
    let b = point_at_length(points, cum, (s + 0.1).min(total));
    let d = xy(&(b - a));
    if d.norm() > 1e-12 {
        d.normalize()
    } else {
        let d = xy(&(points[points.len() - 1] - points[0]));
        if d.norm() > 1e-12 {
            d.normalize()
        } else {
            Vec2::new(1.0, 0.0)
        }
    }
}

/// Sub-trajectory from arc length `s0` extending `horizon` meters (capped at
/// the path end), expressed in a frame at the start point whose heading is
/// the path tangent plus `heading_offset`.
pub fn subtrajectory_at(ep: &Episode, s0: f64, horizon: f64, heading_offset: f64) -> SubTrajectory {
    let points = path3(ep);
    let cum = cumulative_lengths(&points);
    let total = *cum.last().unwrap();
    let s0 = s0.clamp(0.0, total);
    let s1 = (s0 + horizon).min(total);
    let mut world = vec![point_at_length(&points, &cum, s0)];
    for (p, c) in points.iter().zip(&cum) {
        if *c > s0 + 1e-9 && *c < s1 - 1e-9 {
            world.push(*p);
        }
    }
    world.push(point_at_length(&points, &cum, s1));
    let t = tangent_at(&points, &cum, s0);
    let frame = Pose2::new(xy(&world[0]), t.y.atan2(t.x) + heading_offset);
    let segment = world.iter().map(|p| lift(frame.to_local(xy(p)))).collect();
    SubTrajectory { frame, segment, start_arc: s0 }
}

/// Random sub-trajectory: start uniform along the path (leaving at least
/// 0.2 m), horizon uniform in `[horizon_min, horizon_max]`.
pub fn sample_subtrajectory(ep: &Episode, cfg: &ExpertConfig, rng: &mut impl Rng) -> Result<SubTrajectory> {
    let min = cfg.min_episode_length.max(0.2);
    if ep.length < min {
        return Err(ExpertError::TooShort { length: ep.length, min });
    }
    let s0 = rng.random_range(0.0..ep.length - 0.2);
    let horizon = rng.random_range(cfg.horizon_min..=cfg.horizon_max);
    let offset = if cfg.heading_jitter > 0.0 { rng.random_range(-cfg.heading_jitter..=cfg.heading_jitter) } else { 0.0 };
    Ok(subtrajectory_at(ep, s0, horizon, offset))
}

/// Label anchors plus whether the segment had to be padded.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub anchors: AnchorSet,
    pub padded: bool,
    /// Fit residual for B-spline labels, 0 otherwise.
    pub rms: f64,
}

/// Dense resampling used before fitting.
const FIT_SAMPLES: usize = 64;

/// Least-squares fit with parameter correction: after each solve, every
/// interior sample's parameter takes one Newton step toward its closest
/// point on the current curve.
pub fn fit_refined(spec: &SplineSpec, samples: &[Vec3], rounds: usize) -> FitResult {
    let mut params = chord_length_params(samples);
    let mut best = spec.fit_with_params(samples, &params).expect("well-posed fit");
    let (lo, hi) = spec.domain();
    for _ in 0..rounds {
        let cps = &best.control_points;
        for k in 1..params.len() - 1 {
            let u = params[k];
            let d = spec.evaluate(cps, u).unwrap() - samples[k];
            let d1 = spec.derivative(cps, u, 1).unwrap();
            let d2 = spec.derivative(cps, u, 2).unwrap();
            let den = d1.dot(&d1) + d.dot(&d2);
            if den > 1e-12 {
                params[k] = (u - d.dot(&d1) / den).clamp(lo, hi);
            }
        }
        for k in 1..params.len() {
            params[k] = params[k].max(params[k - 1]);
        }
        match spec.fit_with_params(samples, &params) {
            Ok(fit) if fit.rms < best.rms => best = fit,
            _ => break,
        }
    }
    best
}

/// Convert a robot-frame segment starting at the origin into anchors for `kind`.
pub fn make_labels(segment: &[Vec3], kind: RepresentationKind) -> Labels {
    let flat: Vec<Vec3> = segment.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
    let cum = cumulative_lengths(&flat);
    let total = *cum.last().unwrap_or(&0.0);
    let origin_all = || AnchorSet::new(vec![Vec3::zeros(); ANCHOR_COUNT]).unwrap();
    if flat.len() < 2 || total < 1e-9 {
        return Labels { anchors: origin_all(), padded: kind == RepresentationKind::Waypoints, rms: 0.0 };
    }
    let (mut points, padded, rms) = match kind {
        RepresentationKind::Waypoints => {
            let pts = (0..ANCHOR_COUNT)
                .map(|k| point_at_length(&flat, &cum, WAYPOINT_SPACING * k as f64))
                .collect();
            (pts, total < WAYPOINT_SPACING * (ANCHOR_COUNT - 1) as f64 - 1e-9, 0.0)
        }
        RepresentationKind::InterpolatingCubic => (resample_polyline(&flat, ANCHOR_COUNT), false, 0.0),
        RepresentationKind::BSpline => {
            let dense = resample_polyline(&flat, FIT_SAMPLES);
            let fit = fit_refined(&SplineSpec::cubic8(), &dense, 4);
            (fit.control_points.points, false, fit.rms)
        }
    };
    points[0] = Vec3::zeros();
    for p in points.iter_mut() {
        p.z = 0.0;
    }
    Labels { anchors: AnchorSet::new(points).unwrap(), padded, rms }
}

/// Policy conditioning: robot-frame goal, previous heading (or null), ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub goal: Vec2,
    pub v_prev: Vec2,
    pub v_null: bool,
    pub ranges: Vec<f64>,
}

/// Pull `goal` in to at most `cap` meters, keeping its direction.
pub fn clamp_goal(goal: Vec2, cap: f64) -> Vec2 {
    let n = goal.norm();
    if n > cap {
        goal * (cap / n)
    } else {
        goal
    }
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub context: PlannerContext,
    pub anchors: AnchorSet,
    /// World pose of the sample frame (not serialized).
    pub frame: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub episodes: usize,
    pub samples_per_episode: usize,
    pub representation: RepresentationKind,
    pub world: WorldParams,
    pub sensor: SensorConfig,
    pub noise: NoiseParams,
    pub expert: ExpertConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 500,
            samples_per_episode: 40,
            representation: RepresentationKind::BSpline,
            world: WorldParams::default(),
            sensor: SensorConfig::default(),
            noise: NoiseParams::default(),
            expert: ExpertConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: RepresentationKind,
    pub beams: usize,
    pub samples: Vec<DemoSample>,
    pub samples_per_episode: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `round(fraction * episodes)` episodes (at least one) and
    /// their samples.
    pub fn episode_prefix(&self, fraction: f64) -> Dataset {
        let n_ep = if self.episodes.is_empty() {
            0
        } else {
            ((self.episodes.len() as f64 * fraction).round() as usize).clamp(1, self.episodes.len())
        };
        let n = if self.samples_per_episode > 0 {
            (n_ep * self.samples_per_episode).min(self.samples.len())
        } else {
            self.samples.len()
        };
        Dataset {
            kind: self.kind,
            beams: self.beams,
            samples: self.samples[..n].to_vec(),
            samples_per_episode: self.samples_per_episode,
            episodes: self.episodes[..n_ep].to_vec(),
        }
    }
}

/// Generate episode `index`: world, start/goal and expert path. Retries with
/// fresh world seeds until an episode of sufficient length is found.
pub fn generate_episode(cfg: &DataConfig, index: usize) -> Result<(OccupancyGrid, Episode)> {
    for attempt in 0..16u64 {
        let wseed = derive_seed(cfg.seed, streams::WORLD, (index as u64) << 4 | attempt);
        let Ok(world) = generate_world(wseed, &cfg.world) else { continue };
        let Ok(ep) = astar_expert_weighted(
            &world.grid,
            world.start,
            world.goal,
            cfg.world.robot_radius,
            cfg.expert.clearance_margin,
            Some(cfg.expert.clearance_cost),
            wseed,
        ) else {
            continue;
        };
        if ep.length >= cfg.expert.min_episode_length {
            return Ok((world.grid, ep));
        }
    }
    Err(ExpertError::EpisodeFailed(index))
}

fn episode_samples(cfg: &DataConfig, index: usize, grid: &OccupancyGrid, ep: &Episode) -> Result<Vec<DemoSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::SAMPLES, index as u64));
    let mut out = Vec::with_capacity(cfg.samples_per_episode);
    for _ in 0..cfg.samples_per_episode {
        let sub = sample_subtrajectory(ep, &cfg.expert, &mut rng)?;
        let state = RobotState::new(sub.frame.position(), sub.frame.heading, cfg.world.robot_radius);
        let scan = raycast_scan(grid, &state, &cfg.sensor, &cfg.noise, &mut rng);
        let v_null = rng.random_bool(cfg.expert.null_fraction.clamp(0.0, 1.0));
        let labels = make_labels(&sub.segment, cfg.representation);
        let v_prev = labels.anchors.initial_heading().unwrap_or(Vec2::new(1.0, 0.0));
        let goal = clamp_goal(sub.frame.to_local(ep.goal), cfg.expert.goal_cap);
        out.push(DemoSample {
            context: PlannerContext { goal, v_prev, v_null, ranges: scan.ranges },
            anchors: labels.anchors,
            frame: sub.frame,
        });
    }
    Ok(out)
}

/// Deterministic dataset for `cfg`. Episodes are generated independently
/// from derived seeds, so any prefix of episodes is reproducible alone.
pub fn build_dataset(cfg: &DataConfig) -> Result<Dataset> {
    if cfg.episodes == 0 {
        return Err(ExpertError::Format("episode count must be at least 1".into()));
    }
    let per: Vec<Result<(Episode, Vec<DemoSample>)>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let (grid, ep) = generate_episode(cfg, i)?;
            let samples = episode_samples(cfg, i, &grid, &ep)?;
            Ok((ep, samples))
        })
        .collect();
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut samples = Vec::with_capacity(cfg.episodes * cfg.samples_per_episode);
    for r in per {
        let (ep, s) = r?;
        episodes.push(ep);
        samples.extend(s);
    }
    Ok(Dataset {
        kind: cfg.representation,
        beams: cfg.sensor.beams,
        samples,
        samples_per_episode: cfg.samples_per_episode,
        episodes,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExpertError + '_ {
    move |source| ExpertError::Io { path: path.to_path_buf(), source }
}

/// Header: magic, version (u32), sample count (u64), beams (u32), anchor
/// values (u32), representation code (u8). Then fixed-stride records of
/// goal, v_prev, null flag, ranges and anchors. Little-endian.
pub fn write_dataset(ds: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.beams as u32).to_le_bytes())?;
    w.write_all(&((ANCHOR_COUNT * 3) as u32).to_le_bytes())?;
    w.write_all(&[ds.kind.code()])?;
    for s in &ds.samples {
        let c = &s.context;
        for v in [c.goal.x, c.goal.y, c.v_prev.x, c.v_prev.y] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[c.v_null as u8])?;
        for v in &c.ranges {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in s.anchors.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Read a dataset written by [`write_dataset`]. Episode metadata is not part
/// of the file; `samples_per_episode` is taken from the caller.
pub fn read_dataset(mut r: impl Read, samples_per_episode: usize) -> Result<Dataset> {
    let fmt = |e: std::io::Error| ExpertError::Format(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != DATASET_MAGIC {
        return Err(ExpertError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(fmt)?;
    if u32::from_le_bytes(b4) != DATASET_VERSION {
        return Err(ExpertError::Format("unsupported version".into()));
    }
    r.read_exact(&mut b8).map_err(fmt)?;
    let count = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4).map_err(fmt)?;
    let beams = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(fmt)?;
    let dims = u32::from_le_bytes(b4) as usize;
    if dims != ANCHOR_COUNT * 3 {
        return Err(ExpertError::Format(format!("expected {} anchor values, found {dims}", ANCHOR_COUNT * 3)));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1).map_err(fmt)?;
    let kind = RepresentationKind::from_code(b1[0]).ok_or_else(|| ExpertError::Format("unknown representation".into()))?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let head = read_f64s(&mut r, 4).map_err(fmt)?;
        r.read_exact(&mut b1).map_err(fmt)?;
        let ranges = read_f64s(&mut r, beams).map_err(fmt)?;
        let anchors = read_f64s(&mut r, dims).map_err(fmt)?;
        samples.push(DemoSample {
            context: PlannerContext {
                goal: Vec2::new(head[0], head[1]),
                v_prev: Vec2::new(head[2], head[3]),
                v_null: b1[0] != 0,
                ranges,
            },
            anchors: AnchorSet::from_flat(&anchors).map_err(|e| ExpertError::Format(e.to_string()))?,
            frame: Pose2::new(Vec2::zeros(), 0.0),
        });
    }
    Ok(Dataset { kind, beams, samples, samples_per_episode, episodes: Vec::new() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub config: DataConfig,
    pub samples: usize,
    pub world_seeds: Vec<u64>,
    pub episode_lengths: Vec<f64>,
}

/// Write `<dir>/dataset.bin` and `<dir>/manifest.json`.
pub fn save_dataset(ds: &Dataset, cfg: &DataConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bin = dir.join("dataset.bin");
    let f = File::create(&bin).map_err(io_err(&bin))?;
    let mut w = BufWriter::new(f);
    write_dataset(ds, &mut w).map_err(io_err(&bin))?;
    w.flush().map_err(io_err(&bin))?;
    let manifest = DatasetManifest {
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        samples: ds.samples.len(),
        world_seeds: ds.episodes.iter().map(|e| e.world_seed).collect(),
        episode_lengths: ds.episodes.iter().map(|e| e.length).collect(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, text).map_err(io_err(&mpath))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| ExpertError::Format(format!("{}: {e}", mpath.display())))?;
    let bin = dir.join("dataset.bin");
    let f = File::open(&bin).map_err(io_err(&bin))?;
    let mut ds = read_dataset(BufReader::new(f), manifest.config.samples_per_episode)?;
    ds.episodes = manifest
        .world_seeds
        .iter()
        .zip(&manifest.episode_lengths)
        .map(|(s, l)| Episode { world_seed: *s, start: Vec2::zeros(), goal: Vec2::zeros(), expert_path: Vec::new(), length: *l })
        .collect();
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_episode(len: f64) -> Episode {
        let start = Vec2::new(1.0, 1.0);
        let goal = Vec2::new(1.0 + len, 1.0);
        Episode { world_seed: 0, start, goal, expert_path: vec![start, goal], length: len }
    }

    #[test]
    fn empty_room_is_straight() {
        let g = OccupancyGrid::walled_room(8.0, 0.05);
        let (s, t) = (Vec2::new(1.0, 1.2), Vec2::new(6.5, 5.3));
        let ep = astar_expert(&g, s, t, 0.2, 0.1, 0).unwrap();
        assert_eq!(ep.expert_path.len(), 2);
        assert!((ep.length - (t - s).norm()).abs() <= 0.05 * SQRT_2);
    }

    #[test]
    fn door_path_matches_dijkstra() {
        let mut g = OccupancyGrid::walled_room(8.0, 0.05);
        g.fill_rect(Vec2::new(3.9, 0.0), Vec2::new(4.05, 3.0), true);
        g.fill_rect(Vec2::new(3.9, 4.4), Vec2::new(4.05, 8.0), true);
        let blocked = g.inflated(0.3);
        let (a, b) = (g.cell_of(Vec2::new(1.0, 1.0)), g.cell_of(Vec2::new(7.0, 1.0)));
        let astar = grid_search(&blocked, g.width, g.height, a, b, true).unwrap();
        let dijkstra = grid_search(&blocked, g.width, g.height, a, b, false).unwrap();
        assert!((astar.cost() - dijkstra.cost()).abs() < 1e-9);
        let ep = astar_expert(&g, Vec2::new(1.0, 1.0), Vec2::new(7.0, 1.0), 0.2, 0.1, 0).unwrap();
        assert!(ep.expert_path.iter().any(|p| p.y > 3.0 && p.y < 4.4 && (p.x - 4.0).abs() < 0.6));
        assert!(ep.length <= dijkstra.cost() * 0.05 + 1e-9);
    }

    #[test]
    fn goal_inside_obstacle() {
        let mut g = OccupancyGrid::walled_room(6.0, 0.05);
        g.fill_disc(Vec2::new(4.0, 3.0), 0.5, true);
        let r = astar_expert(&g, Vec2::new(1.0, 1.0), Vec2::new(4.0, 3.0), 0.2, 0.1, 0);
        assert!(matches!(r, Err(ExpertError::EndpointBlocked)));
    }

    #[test]
    fn straight_subtrajectory_frame() {
        let ep = straight_episode(10.0);
        let sub = subtrajectory_at(&ep, 2.0, 6.0, 0.0);
        let end = sub.segment.last().unwrap();
        assert!((end - Vec3::new(6.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(sub.segment.iter().all(|p| p.y.abs() < 1e-12));
    }

    #[test]
    fn horizon_capped_at_path_end() {
        let ep = straight_episode(3.0);
        let sub = subtrajectory_at(&ep, 0.0, 6.0, 0.0);
        assert!((sub.segment.last().unwrap().x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded() {
        let ep = straight_episode(10.0);
        let cfg = ExpertConfig::default();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            (0..5).map(|_| sample_subtrajectory(&ep, &cfg, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
        let short = straight_episode(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(sample_subtrajectory(&short, &cfg, &mut rng), Err(ExpertError::TooShort { .. })));
    }

    #[test]
    fn label_examples() {
        let line: Vec<Vec3> = vec![Vec3::zeros(), Vec3::new(6.0, 0.0, 0.0)];
        let w = make_labels(&line, RepresentationKind::Waypoints);
        for (k, p) in w.anchors.points().iter().enumerate() {
            assert!((p.x - 0.2 * k as f64).abs() < 1e-12 && p.y == 0.0);
        }
        assert!(!w.padded);
        let b = make_labels(&line, RepresentationKind::BSpline);
        assert!(b.rms <= 0.01);
        assert!(b.anchors.points().iter().all(|p| p.y.abs() < 0.01));

        let short = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let w = make_labels(&short, RepresentationKind::Waypoints);
        assert!(w.padded && w.anchors.points()[7].x == 1.0);

        let ell = vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0), Vec3::new(3.0, 3.0, 0.0)];
        let b = make_labels(&ell, RepresentationKind::BSpline);
        assert!(b.rms <= 0.05, "{}", b.rms);
        let c = make_labels(&ell, RepresentationKind::InterpolatingCubic);
        assert!((c.anchors.points()[7] - ell[2]).norm() < 1e-12);
    }

    fn tiny_config() -> DataConfig {
        DataConfig { episodes: 2, samples_per_episode: 5, ..Default::default() }
    }

    #[test]
    fn dataset_roundtrip_and_determinism() {
        let cfg = tiny_config();
        let a = build_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 10);
        let mut buf_a = Vec::new();
        write_dataset(&a, &mut buf_a).unwrap();
        let mut buf_b = Vec::new();
        write_dataset(&build_dataset(&cfg).unwrap(), &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let back = read_dataset(buf_a.as_slice(), 5).unwrap();
        for (x, y) in back.samples.iter().zip(&a.samples) {
            assert_eq!(x.context, y.context);
            assert_eq!(x.anchors, y.anchors);
        }
        for s in &a.samples {
            let h = s.anchors.initial_heading().unwrap();
            assert!((h - s.context.v_prev).norm() < 1e-9);
            assert_eq!(s.anchors.points()[0], Vec3::zeros());
            assert!(s.context.goal.norm() <= 6.0 + 1e-12);
        }
    }

    #[test]
    fn prefixes_are_stable() {
        let cfg = DataConfig { episodes: 3, samples_per_episode: 2, ..Default::default() };
        let full = build_dataset(&cfg).unwrap();
        let small = build_dataset(&DataConfig { episodes: 1, ..cfg.clone() }).unwrap();
        assert_eq!(full.episode_prefix(1.0 / 3.0).samples, small.samples);
    }
}
