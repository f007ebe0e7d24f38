//! Procedural 2D grid worlds: occupancy, a raycast range sensor with
//! injectable noise, and disc-robot motion with swept collision checks.

use crate::geom::{wrap_angle, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::{Read, Write};
use thiserror::Error;

pub const WORLD_MAGIC: &[u8; 4] = b"SDPW";
pub const WORLD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("start and goal not connected after {0} attempts")]
    Disconnected(usize),
    #[error("bad world file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// Row-major boolean occupancy; cell `(ix, iy)` covers
/// `origin + [ix, ix+1) x [iy, iy+1)` times `resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub origin: Vec2,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    /// All-free grid of `width x height` cells.
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vec2) -> Self {
        assert!(resolution > 0.0 && width > 0 && height > 0);
        Self { resolution, width, height, origin, cells: vec![false; width * height] }
    }

    pub fn from_cells(width: usize, height: usize, resolution: f64, origin: Vec2, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), width * height);
        Self { resolution, width, height, origin, cells }
    }

    /// Free room of `size_m` meters per side with a one-cell boundary wall.
    pub fn walled_room(size_m: f64, resolution: f64) -> Self {
        let n = (size_m / resolution).round() as usize;
        let mut g = Self::new(n, n, resolution, Vec2::zeros());
        g.add_boundary();
        g
    }

    pub fn add_boundary(&mut self) {
        for x in 0..self.width {
            self.set(x, 0, true);
            self.set(x, self.height - 1, true);
        }
        for y in 0..self.height {
            self.set(0, y, true);
            self.set(self.width - 1, y, true);
        }
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    /// Occupancy; anything outside the grid counts as occupied.
    pub fn occupied(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return true;
        }
        self.cells[iy as usize * self.width + ix as usize]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: bool) {
        let i = self.index(ix, iy);
        self.cells[i] = value;
    }

    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        let q = (p - self.origin) / self.resolution;
        (q.x.floor() as i64, q.y.floor() as i64)
    }

    pub fn cell_center(&self, ix: i64, iy: i64) -> Vec2 {
        self.origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && ix < self.width as i64 && iy < self.height as i64
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (ix, iy) = self.cell_of(p);
        self.in_bounds(ix, iy)
    }

    pub fn extent(&self) -> Vec2 {
        Vec2::new(self.width as f64, self.height as f64) * self.resolution
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn fill_rect(&mut self, min: Vec2, max: Vec2, value: bool) {
        let (x0, y0) = self.cell_of(min);
        let (x1, y1) = self.cell_of(max);
        for iy in y0.max(0)..=y1.min(self.height as i64 - 1) {
            for ix in x0.max(0)..=x1.min(self.width as i64 - 1) {
                self.set(ix as usize, iy as usize, value);
            }
        }
    }

    /// Set every cell whose center lies within `radius` of `center`.
    pub fn fill_disc(&mut self, center: Vec2, radius: f64, value: bool) {
        let r = Vec2::new(radius, radius);
        let (x0, y0) = self.cell_of(center - r);
        let (x1, y1) = self.cell_of(center + r);
        for iy in y0.max(0)..=y1.min(self.height as i64 - 1) {
            for ix in x0.max(0)..=x1.min(self.width as i64 - 1) {
                if (self.cell_center(ix, iy) - center).norm() <= radius {
                    self.set(ix as usize, iy as usize, value);
                }
            }
        }
    }

    /// Cells whose center is closer than `radius` to some occupied cell center.
    pub fn inflated(&self, radius: f64) -> Vec<bool> {
        let mut out = self.cells.clone();
        let k = (radius / self.resolution).ceil() as i64;
        let r2 = (radius / self.resolution).powi(2);
        let mut offsets = Vec::new();
        for dy in -k..=k {
            for dx in -k..=k {
                if ((dx * dx + dy * dy) as f64) < r2 {
                    offsets.push((dx, dy));
                }
            }
        }
        for iy in 0..self.height as i64 {
            for ix in 0..self.width as i64 {
                if !self.cells[iy as usize * self.width + ix as usize] {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (x, y) = (ix + dx, iy + dy);
                    if self.in_bounds(x, y) {
                        out[y as usize * self.width + x as usize] = true;
                    }
                }
            }
        }
        out
    }

    /// True if a disc of `radius` at `center` overlaps any occupied cell square.
    pub fn disc_collides(&self, center: Vec2, radius: f64) -> bool {
        let r = Vec2::new(radius, radius);
        let (x0, y0) = self.cell_of(center - r);
        let (x1, y1) = self.cell_of(center + r);
        let half = self.resolution / 2.0;
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                if !self.occupied(ix, iy) {
                    continue;
                }
                let c = self.cell_center(ix, iy);
                let dx = ((c.x - center.x).abs() - half).max(0.0);
                let dy = ((c.y - center.y).abs() - half).max(0.0);
                if dx * dx + dy * dy < radius * radius {
                    return true;
                }
            }
        }
        false
    }

    /// `#` occupied, `.` free; first line is the top row.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for iy in (0..self.height).rev() {
            for ix in 0..self.width {
                s.push(if self.cells[self.index(ix, iy)] { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, resolution: f64, origin: Vec2) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(WorldError::Format("ragged or empty text grid".into()));
        }
        let mut g = Self::new(width, height, resolution, origin);
        for (r, row) in rows.iter().enumerate() {
            let iy = height - 1 - r;
            for (ix, ch) in row.chars().enumerate() {
                match ch {
                    '#' => g.set(ix, iy, true),
                    '.' => {}
                    other => return Err(WorldError::Format(format!("unexpected character {other:?}"))),
                }
            }
        }
        Ok(g)
    }

    /// Binary form: magic, version, resolution, dims, origin, then
    /// bit-packed occupancy (row-major, LSB first). Little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WORLD_MAGIC)?;
        w.write_all(&WORLD_VERSION.to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&self.origin.x.to_le_bytes())?;
        w.write_all(&self.origin.y.to_le_bytes())?;
        let mut bytes = vec![0u8; self.cells.len().div_ceil(8)];
        for (i, c) in self.cells.iter().enumerate() {
            if *c {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WORLD_MAGIC {
            return Err(WorldError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != WORLD_VERSION {
            return Err(WorldError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b8)?;
        let resolution = f64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let ox = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let oy = f64::from_le_bytes(b8);
        if !(resolution > 0.0) || width == 0 || height == 0 {
            return Err(WorldError::Format("bad dimensions".into()));
        }
        let mut bytes = vec![0u8; (width * height).div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let cells = (0..width * height).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(Self::from_cells(width, height, resolution, Vec2::new(ox, oy), cells))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleKind {
    Box,
    Disc,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Side length of the square room, meters.
    pub size: f64,
    pub resolution: f64,
    /// Target fraction of interior cells occupied, in [0, 0.4].
    pub density: f64,
    pub kinds: Vec<ObstacleKind>,
    /// Inclusive range for the number of door walls (if `Wall` is enabled).
    pub walls: (usize, usize),
    pub robot_radius: f64,
    /// Radius kept free around start and goal.
    pub endpoint_clearance: f64,
    /// Start-goal separation range, meters.
    pub separation: (f64, f64),
    /// Smallest free gap between a new box or disc and anything already
    /// occupied (0 allows touching).
    pub min_gap: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            size: 12.0,
            resolution: 0.05,
            density: 0.12,
            kinds: vec![ObstacleKind::Box, ObstacleKind::Disc, ObstacleKind::Wall],
            walls: (0, 1),
            robot_radius: 0.2,
            endpoint_clearance: 0.6,
            separation: (7.0, 10.0),
            min_gap: 0.8,
        }
    }
}

/// A generated room plus its designated start and goal.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub start: Vec2,
    pub goal: Vec2,
    pub seed: u64,
}

const MAX_ATTEMPTS: usize = 20;

/// Deterministic procedural room for `seed`; start and goal are verified
/// connected for a robot of `params.robot_radius`.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<World> {
    if !(0.0..=0.4).contains(&params.density) {
        return Err(WorldError::InvalidParams(format!("density {} outside [0, 0.4]", params.density)));
    }
    if params.size < 4.0 || params.resolution <= 0.0 {
        return Err(WorldError::InvalidParams("room too small or non-positive resolution".into()));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let world = build_candidate(&mut rng, params, seed);
        if connected(&world.grid, world.start, world.goal, params.robot_radius) {
            return Ok(world);
        }
    }
    Err(WorldError::Disconnected(MAX_ATTEMPTS))
}

fn build_candidate(rng: &mut ChaCha8Rng, params: &WorldParams, seed: u64) -> World {
    let mut grid = OccupancyGrid::walled_room(params.size, params.resolution);
    let size = grid.extent().x;
    let center = Vec2::new(size / 2.0, size / 2.0);
    let margin = params.endpoint_clearance + 0.3;

    let (start, goal) = loop {
        let sep = rng.random_range(params.separation.0..=params.separation.1);
        let theta = rng.random_range(0.0..TAU);
        let dir = Vec2::new(theta.cos(), theta.sin());
        let jitter = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s = center - dir * (sep / 2.0) + jitter;
        let g = center + dir * (sep / 2.0) + jitter;
        let inside = |p: Vec2| p.x > margin && p.y > margin && p.x < size - margin && p.y < size - margin;
        if inside(s) && inside(g) {
            break (s, g);
        }
    };

    let interior = ((grid.width - 2) * (grid.height - 2)) as f64;
    let keep_clear = |p: Vec2, r: f64| {
        (p - start).norm() < params.endpoint_clearance + r || (p - goal).norm() < params.endpoint_clearance + r
    };

    if params.density > 0.0 && params.kinds.contains(&ObstacleKind::Wall) {
        let count = rng.random_range(params.walls.0..=params.walls.1.max(params.walls.0));
        for _ in 0..count {
            add_door_wall(&mut grid, rng, params);
        }
    }

    let blobs: Vec<ObstacleKind> =
        params.kinds.iter().copied().filter(|k| *k != ObstacleKind::Wall).collect();
    // Give up after a run of rejected placements (the gap rule can make the
    // target density unreachable).
    let mut misses = 0;
    while !blobs.is_empty()
        && ((grid.occupied_count() as f64 - boundary_cells(&grid)) / interior) < params.density
        && misses < 500
    {
        misses += 1;
        let c = Vec2::new(rng.random_range(0.3..size - 0.3), rng.random_range(0.3..size - 0.3));
        match blobs[rng.random_range(0..blobs.len())] {
            ObstacleKind::Box => {
                let half = Vec2::new(rng.random_range(0.15..0.6), rng.random_range(0.15..0.6));
                if keep_clear(c, half.norm()) || !gap_free(&grid, c, half + Vec2::repeat(params.min_gap), |p| {
                    let d = ((p - c).abs() - half).map(|v| v.max(0.0));
                    d.norm() < params.min_gap
                }) {
                    continue;
                }
                grid.fill_rect(c - half, c + half, true);
                misses = 0;
            }
            ObstacleKind::Disc => {
                let r = rng.random_range(0.2..0.6);
                let reach = r + params.min_gap;
                if keep_clear(c, r) || !gap_free(&grid, c, Vec2::repeat(reach), |p| (p - c).norm() < reach) {
                    continue;
                }
                grid.fill_disc(c, r, true);
                misses = 0;
            }
            ObstacleKind::Wall => unreachable!(),
        }
    }
    grid.fill_disc(start, params.endpoint_clearance, false);
    grid.fill_disc(goal, params.endpoint_clearance, false);
    grid.add_boundary();
    World { grid, start, goal, seed }
}

/// True when no occupied cell center inside the box `c ± half` satisfies `near`.
fn gap_free(grid: &OccupancyGrid, c: Vec2, half: Vec2, near: impl Fn(Vec2) -> bool) -> bool {
    let (x0, y0) = grid.cell_of(c - half);
    let (x1, y1) = grid.cell_of(c + half);
    for iy in y0.max(0)..=y1.min(grid.height as i64 - 1) {
        for ix in x0.max(0)..=x1.min(grid.width as i64 - 1) {
            if grid.occupied(ix, iy) && near(grid.cell_center(ix, iy)) {
                return false;
            }
        }
    }
    true
}

fn boundary_cells(g: &OccupancyGrid) -> f64 {
    (2 * g.width + 2 * g.height - 4) as f64
}

/// Axis-aligned wall across part of the room with one door gap of at
/// least three robot diameters.
fn add_door_wall(grid: &mut OccupancyGrid, rng: &mut ChaCha8Rng, params: &WorldParams) {
    let size = grid.extent().x;
    let thickness = 0.15;
    let min_gap = 6.0 * params.robot_radius;
    let gap = rng.random_range(min_gap..min_gap + 0.8);
    let at = rng.random_range(size * 0.3..size * 0.7);
    let span = rng.random_range(0.5..1.0) * size;
    let from_low = rng.random_bool(0.5);
    let (a, b) = if from_low { (0.0, span) } else { (size - span, size) };
    let door = rng.random_range(a + 0.2..(b - gap - 0.2).max(a + 0.3));
    let horizontal = rng.random_bool(0.5);
    let mut rect = |lo: f64, hi: f64| {
        if hi <= lo {
            return;
        }
        if horizontal {
            grid.fill_rect(Vec2::new(lo, at), Vec2::new(hi, at + thickness), true);
        } else {
            grid.fill_rect(Vec2::new(at, lo), Vec2::new(at + thickness, hi), true);
        }
    };
    rect(a, door);
    rect(door + gap, b);
}

/// 4-connected flood fill over cells the robot disc can occupy.
pub fn connected(grid: &OccupancyGrid, start: Vec2, goal: Vec2, robot_radius: f64) -> bool {
    let blocked = grid.inflated(robot_radius + grid.resolution * std::f64::consts::FRAC_1_SQRT_2);
    let (sx, sy) = grid.cell_of(start);
    let (gx, gy) = grid.cell_of(goal);
    if !grid.in_bounds(sx, sy) || !grid.in_bounds(gx, gy) {
        return false;
    }
    let idx = |x: i64, y: i64| y as usize * grid.width + x as usize;
    if blocked[idx(sx, sy)] || blocked[idx(gx, gy)] {
        return false;
    }
    let mut seen = vec![false; blocked.len()];
    let mut queue = VecDeque::from([(sx, sy)]);
    seen[idx(sx, sy)] = true;
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == (gx, gy) {
            return true;
        }
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if grid.in_bounds(nx, ny) && !blocked[idx(nx, ny)] && !seen[idx(nx, ny)] {
                seen[idx(nx, ny)] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    /// Radians in (-pi, pi].
    pub heading: f64,
    pub radius: f64,
}

impl RobotState {
    pub fn new(position: Vec2, heading: f64, radius: f64) -> Self {
        Self { position, heading: wrap_angle(heading), radius }
    }

    pub fn pose(&self) -> crate::geom::Pose2 {
        crate::geom::Pose2::new(self.position, self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub enabled: bool,
    /// Axial noise standard deviation per squared meter of range.
    pub axial_coeff: f64,
    pub dropout: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { enabled: true, axial_coeff: 0.005, dropout: 0.1 }
    }
}

impl NoiseParams {
    pub fn off() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub beams: usize,
    pub fov: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { beams: 64, fov: TAU, max_range: 6.0 }
    }
}

impl SensorConfig {
    /// Beam angle relative to the robot heading. A full circle starts at
    /// the forward direction; a partial fan is centered on it.
    pub fn beam_angle(&self, k: usize) -> f64 {
        if self.fov >= TAU - 1e-9 {
            wrap_angle(TAU * k as f64 / self.beams as f64)
        } else if self.beams == 1 {
            0.0
        } else {
            -self.fov / 2.0 + self.fov * k as f64 / (self.beams - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    pub ranges: Vec<f64>,
    pub fov: f64,
    pub max_range: f64,
    /// Scan origin was inside an obstacle; all readings are zero.
    pub inside_obstacle: bool,
}

/// Distance along a ray to the first occupied cell boundary (DDA traversal),
/// capped at `max_range`.
pub fn cast_ray(grid: &OccupancyGrid, from: Vec2, angle: f64, max_range: f64) -> f64 {
    trace_ray(grid, from, angle, max_range).0
}

/// Like [`cast_ray`] but also returns the occupied cell that stopped the ray.
pub fn trace_ray(grid: &OccupancyGrid, from: Vec2, angle: f64, max_range: f64) -> (f64, Option<(i64, i64)>) {
    let res = grid.resolution;
    let (mut ix, mut iy) = grid.cell_of(from);
    if grid.occupied(ix, iy) {
        return (0.0, Some((ix, iy)));
    }
    let (dy, dx) = angle.sin_cos();
    let local = (from - grid.origin) / res;
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((ix + 1) as f64 - local.x) * res / dx
    } else if dx < 0.0 {
        (local.x - ix as f64) * res / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((iy + 1) as f64 - local.y) * res / dy
    } else if dy < 0.0 {
        (local.y - iy as f64) * res / -dy
    } else {
        f64::INFINITY
    };
    loop {
        let t = if t_max_x < t_max_y {
            ix += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            iy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= max_range {
            return (max_range, None);
        }
        if grid.occupied(ix, iy) {
            return (t, Some((ix, iy)));
        }
    }
}

/// Range scan from the robot pose. With noise enabled each reading gets
/// additive Gaussian noise with sigma `axial_coeff * d^2`, is replaced by
/// `max_range` with probability `dropout`, and is clamped to `[0, max_range]`.
pub fn raycast_scan(
    grid: &OccupancyGrid,
    state: &RobotState,
    sensor: &SensorConfig,
    noise: &NoiseParams,
    rng: &mut impl Rng,
) -> RangeScan {
    let (cx, cy) = grid.cell_of(state.position);
    if grid.occupied(cx, cy) {
        return RangeScan {
            ranges: vec![0.0; sensor.beams],
            fov: sensor.fov,
            max_range: sensor.max_range,
            inside_obstacle: true,
        };
    }
    let ranges = (0..sensor.beams)
        .map(|k| {
            let d = cast_ray(grid, state.position, state.heading + sensor.beam_angle(k), sensor.max_range);
            if !noise.enabled {
                return d;
            }
            let sigma = noise.axial_coeff * d * d;
            let noisy = if sigma > 0.0 { d + Normal::new(0.0, sigma).unwrap().sample(rng) } else { d };
            let dropped = rng.random_bool(noise.dropout.clamp(0.0, 1.0));
            if dropped {
                sensor.max_range
            } else {
                noisy.clamp(0.0, sensor.max_range)
            }
        })
        .collect();
    RangeScan { ranges, fov: sensor.fov, max_range: sensor.max_range, inside_obstacle: false }
}

/// Move up to `step_len` straight toward `target`, checking the swept disc
/// every half cell. On contact the robot stops at the last free pose.
pub fn step_robot(grid: &OccupancyGrid, state: &RobotState, target: Vec2, step_len: f64) -> (RobotState, bool) {
    let delta = target - state.position;
    let dist = delta.norm();
    let travel = dist.min(step_len.max(0.0));
    if travel < 1e-12 {
        return (*state, false);
    }
    let dir = delta / dist;
    let heading = dir.y.atan2(dir.x);
    let n = (travel / (grid.resolution / 2.0)).ceil().max(1.0) as usize;
    let mut last = state.position;
    for k in 1..=n {
        let p = state.position + dir * (travel * k as f64 / n as f64);
        if grid.disc_collides(p, state.radius) {
            let moved = (last - state.position).norm() > 0.0;
            let h = if moved { heading } else { state.heading };
            return (RobotState::new(last, h, state.radius), true);
        }
        last = p;
    }
    (RobotState::new(last, heading, state.radius), false)
}
