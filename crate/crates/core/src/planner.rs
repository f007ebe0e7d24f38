//! Receding-horizon loop: sense, sample candidates, select with the critic,
//! execute a short prefix, and carry the chosen plan forward.

use crate::critic::{invalid_breakdown, argmin_total, score, CostBreakdown, CriticConfig};
use crate::diffusion::{DiffusionError, DiffusionPolicy, SamplerMode};
use crate::esdf::scan_field;
use crate::expert::{clamp_goal, make_labels, shortest_path_length, PlannerContext};
use crate::geom::{lift, xy, Pose2, Vec2, Vec3};
use crate::repr::{decode, AnchorSet};
use crate::seed::{derive_seed, streams};
use crate::spline::ControlPointSet;
use crate::trajectory::Trajectory;
use crate::world::{raycast_scan, step_robot, NoiseParams, OccupancyGrid, RobotState, SensorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Candidates per step.
    pub k: usize,
    pub warm_start: bool,
    pub start_step: usize,
    pub sampler: SamplerMode,
    /// Distance executed between replans, meters.
    pub execute_length: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub robot_radius: f64,
    pub goal_cap: f64,
    /// Feed the previous plan heading to the policy; off means the null
    /// flag is always set.
    pub use_vtoken: bool,
    /// Rays used to build the scan-visible occupancy for the critic.
    pub critic_rays: usize,
    pub critic: CriticConfig,
    pub sensor: SensorConfig,
    pub noise: NoiseParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k: 16,
            warm_start: true,
            start_step: 6,
            sampler: SamplerMode::Deterministic,
            execute_length: 0.2,
            goal_radius: 0.3,
            max_steps: 600,
            robot_radius: 0.2,
            goal_cap: 6.0,
            use_vtoken: true,
            critic_rays: 360,
            critic: CriticConfig::default(),
            sensor: SensorConfig::default(),
            noise: NoiseParams::default(),
        }
    }
}

/// Mutable per-episode planner memory.
#[derive(Debug, Clone)]
pub struct PlannerState {
    pub robot: RobotState,
    pub t: usize,
    /// Chosen anchors of the previous step, in that step's robot frame.
    pub prev_plan: Option<(Pose2, AnchorSet)>,
    /// World-frame trajectory chosen at the previous step.
    pub prev_traj: Option<Trajectory>,
    pub force_cold: bool,
}

impl PlannerState {
    pub fn new(robot: RobotState) -> Self {
        Self { robot, t: 0, prev_plan: None, prev_traj: None, force_cold: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCosts {
    pub j_safe: f64,
    pub j_len: f64,
    pub j_goal: f64,
    pub j_total: f64,
}

/// Log record of one planning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub t: usize,
    pub pose_before: Pose2,
    pub pose_after: Pose2,
    pub chosen: Option<usize>,
    pub costs: Option<StepCosts>,
    pub v_prev: Vec2,
    pub v_null: bool,
    pub warm: bool,
    pub blocked: bool,
    pub collided: bool,
    pub reverse_steps: usize,
    /// World-frame heading of the first 0.2 m of the chosen trajectory.
    pub initial_heading: Option<f64>,
    pub executed: Vec<Vec2>,
    pub rejected: usize,
    /// Scan-visible clearance at the pose before the step.
    pub clearance: f64,
    pub latency_ms: f64,
    #[serde(skip)]
    pub chosen_traj: Option<Trajectory>,
    #[serde(skip)]
    pub chosen_anchors: Option<ControlPointSet>,
}

/// Policy context at the current pose.
pub fn assemble_context(
    grid: &OccupancyGrid,
    robot: &RobotState,
    goal_world: Vec2,
    prev: Option<&(Pose2, AnchorSet)>,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> PlannerContext {
    let pose = robot.pose();
    let scan = raycast_scan(grid, robot, &cfg.sensor, &cfg.noise, rng);
    let goal = clamp_goal(pose.to_local(goal_world), cfg.goal_cap);
    let heading = prev.and_then(|(frame, anchors)| {
        anchors.initial_heading().map(|d| pose.rotate_to_local(frame.rotate_to_world(d)).normalize())
    });
    match heading {
        Some(v) if cfg.use_vtoken => PlannerContext { goal, v_prev: v, v_null: false, ranges: scan.ranges },
        _ => PlannerContext { goal, v_prev: Vec2::zeros(), v_null: true, ranges: scan.ranges },
    }
}

/// Arc length of the point on `traj` closest to `p`.
fn project_arc(traj: &Trajectory, p: Vec2) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 1..traj.points.len() {
        let a = xy(&traj.points[k - 1]);
        let b = xy(&traj.points[k]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = (a + ab * t - p).norm();
        if d < best.0 {
            best = (d, traj.arc_length[k - 1] + t * (traj.arc_length[k] - traj.arc_length[k - 1]));
        }
    }
    best.1
}

/// Remainder of `traj` beyond `s0`, as a world polyline.
fn remainder(traj: &Trajectory, s0: f64) -> Vec<Vec3> {
    let mut pts = vec![traj.point_at(s0)];
    for (p, s) in traj.points.iter().zip(&traj.arc_length) {
        if *s > s0 + 1e-9 {
            pts.push(*p);
        }
    }
    pts
}

/// Previous plan re-expressed in the current frame: the untraveled part of
/// the previous trajectory, refitted as anchors of the active representation.
pub fn warm_start_anchors(policy: &DiffusionPolicy, prev_traj: &Trajectory, pose: &Pose2) -> Option<AnchorSet> {
    let s0 = project_arc(prev_traj, pose.position());
    let rest = remainder(prev_traj, s0);
    let local: Vec<Vec3> = rest.iter().map(|p| lift(pose.to_local(xy(p)))).collect();
    let len: f64 = local.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if len < 0.1 {
        return None;
    }
    let mut local = local;
    local[0] = Vec3::zeros();
    Some(make_labels(&local, policy.kind).anchors)
}

/// Move along `traj` for up to `length` meters, one straight sweep per
/// polyline segment.
fn execute_prefix(grid: &OccupancyGrid, robot: RobotState, traj: &Trajectory, length: f64) -> (RobotState, bool, Vec<Vec2>) {
    let mut state = robot;
    let mut left = length;
    let mut path = vec![state.position];
    for p in traj.points.iter().skip(1) {
        if left <= 1e-12 {
            break;
        }
        let target = xy(p);
        let d = (target - state.position).norm();
        if d < 1e-12 {
            continue;
        }
        let (next, hit) = step_robot(grid, &state, target, left);
        left -= (next.position - state.position).norm();
        state = next;
        path.push(state.position);
        if hit {
            return (state, true, path);
        }
    }
    (state, false, path)
}

fn heading_of(traj: &Trajectory) -> Option<f64> {
    let d = xy(&(traj.point_at(0.2) - traj.start()));
    (d.norm() > 1e-9).then(|| d.y.atan2(d.x))
}

/// One sense-sample-select-execute cycle.
pub fn plan_step(
    policy: &DiffusionPolicy,
    grid: &OccupancyGrid,
    state: &mut PlannerState,
    goal_world: Vec2,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PlanStep, DiffusionError> {
    let started = Instant::now();
    let pose = state.robot.pose();
    let ctx = assemble_context(grid, &state.robot, goal_world, state.prev_plan.as_ref(), cfg, rng);
    let warm_prev = if cfg.warm_start && !state.force_cold {
        state.prev_traj.as_ref().and_then(|t| warm_start_anchors(policy, t, &pose))
    } else {
        None
    };
    let out = match &warm_prev {
        Some(a) => policy.warm_start_sample(&a.as_control_points(), &ctx, cfg.k, cfg.start_step, rng, cfg.sampler)?,
        None => policy.sample(&ctx, cfg.k, rng, cfg.sampler)?,
    };

    let field = scan_field(grid, pose.position(), cfg.critic_rays, cfg.sensor.max_range);
    let mut trajs = Vec::with_capacity(out.candidates.len());
    let mut breakdowns: Vec<CostBreakdown> = Vec::with_capacity(out.candidates.len());
    for cps in &out.candidates {
        let anchors = AnchorSet::from(cps.clone());
        match decode(policy.kind, &anchors, cfg.critic.m) {
            Ok(local) => {
                let world = local.map_points(|p| lift(pose.to_world(xy(p))));
                breakdowns.push(score(field.as_ref(), &world, goal_world, &cfg.critic));
                trajs.push(Some(world));
            }
            Err(_) => {
                breakdowns.push(invalid_breakdown());
                trajs.push(None);
            }
        }
    }
    let chosen = argmin_total(&breakdowns);
    let rejected = breakdowns.iter().filter(|b| b.rejected).count();

    let mut step = PlanStep {
        t: state.t,
        pose_before: pose,
        pose_after: pose,
        chosen,
        costs: None,
        v_prev: ctx.v_prev,
        v_null: ctx.v_null,
        warm: warm_prev.is_some(),
        blocked: chosen.is_none(),
        collided: false,
        reverse_steps: out.reverse_steps,
        initial_heading: None,
        executed: vec![pose.position()],
        rejected,
        clearance: field.distance(pose.position()),
        latency_ms: 0.0,
        chosen_traj: None,
        chosen_anchors: None,
    };
    state.t += 1;
    match chosen {
        None => {
            state.prev_plan = None;
            state.prev_traj = None;
            state.force_cold = true;
        }
        Some(i) => {
            let traj = trajs[i].clone().expect("chosen candidate decoded");
            let b = &breakdowns[i];
            step.costs = Some(StepCosts { j_safe: b.j_safe, j_len: b.j_len, j_goal: b.j_goal, j_total: b.j_total });
            step.initial_heading = heading_of(&traj);
            step.latency_ms = started.elapsed().as_secs_f64() * 1e3;
            let (next, hit, path) = execute_prefix(grid, state.robot, &traj, cfg.execute_length);
            step.collided = hit;
            step.executed = path;
            step.pose_after = next.pose();
            state.robot = next;
            state.prev_plan = Some((pose, AnchorSet::from(out.candidates[i].clone())));
            state.prev_traj = Some(traj.clone());
            state.force_cold = false;
            step.chosen_traj = Some(traj);
            step.chosen_anchors = Some(out.candidates[i].clone());
        }
    }
    if step.latency_ms == 0.0 {
        step.latency_ms = started.elapsed().as_secs_f64() * 1e3;
    }
    Ok(step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub collided: bool,
    pub steps: usize,
    pub path_length: f64,
    pub shortest_length: f64,
    pub blocked_steps: usize,
    /// Mean absolute change of the chosen initial heading between
    /// consecutive steps, radians.
    pub heading_oscillation: f64,
}

/// Mean absolute wrapped difference between consecutive headings.
pub fn heading_oscillation(headings: &[Option<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for w in headings.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            sum += crate::geom::wrap_angle(b - a).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Run until the goal radius is reached, a collision occurs or the step
/// budget runs out.
pub fn run_episode(
    policy: &DiffusionPolicy,
    grid: &OccupancyGrid,
    start: Vec2,
    goal: Vec2,
    cfg: &PlannerConfig,
    seed: u64,
    mut trace: Option<&mut Vec<PlanStep>>,
) -> Result<EpisodeResult, DiffusionError> {
    let shortest = shortest_path_length(grid, start, goal, cfg.robot_radius).unwrap_or(f64::INFINITY);
    let d = goal - start;
    let heading = if d.norm() > 1e-9 { d.y.atan2(d.x) } else { 0.0 };
    let mut state = PlannerState::new(RobotState::new(start, heading, cfg.robot_radius));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::EPISODE, 0));
    let mut result = EpisodeResult {
        success: false,
        collided: false,
        steps: 0,
        path_length: 0.0,
        shortest_length: shortest,
        blocked_steps: 0,
        heading_oscillation: 0.0,
    };
    let mut headings = Vec::new();
    if (goal - start).norm() <= cfg.goal_radius {
        result.success = true;
        result.shortest_length = shortest.max(1e-9);
        return Ok(result);
    }
    while result.steps < cfg.max_steps {
        let step = plan_step(policy, grid, &mut state, goal, cfg, &mut rng)?;
        result.steps += 1;
        result.path_length += step.executed.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();
        result.blocked_steps += step.blocked as usize;
        headings.push(step.initial_heading);
        let collided = step.collided;
        if let Some(t) = trace.as_deref_mut() {
            t.push(step);
        }
        if collided {
            result.collided = true;
            break;
        }
        if (state.robot.position - goal).norm() <= cfg.goal_radius {
            result.success = true;
            break;
        }
    }
    result.heading_oscillation = heading_oscillation(&headings);
    Ok(result)
}
