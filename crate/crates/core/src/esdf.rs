//! Euclidean signed distance fields over occupancy grids.

use crate::geom::Vec2;
use crate::world::{trace_ray, OccupancyGrid};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EsdfError {
    #[error("grid has no obstacle surface (all cells {0})")]
    NoSurface(&'static str),
}

/// Anything that reports signed clearance at a world position.
pub trait SignedDistance: Sync {
    /// Signed distance in meters; 0 outside the known region.
    fn distance(&self, p: Vec2) -> f64;
}

/// Field for a scene with no visible obstacles.
#[derive(Debug, Clone, Copy)]
pub struct OpenSpace {
    pub clearance: f64,
}

impl Default for OpenSpace {
    fn default() -> Self {
        Self { clearance: 1e3 }
    }
}

impl SignedDistance for OpenSpace {
    fn distance(&self, _p: Vec2) -> f64 {
        self.clearance
    }
}

/// Per-cell signed distance. Free cells hold the distance from their center
/// to the nearest occupied cell center. Occupied cells hold
/// `-(d - resolution)`, where `d` is the distance to the nearest free cell
/// center, so the obstacle surface layer reads 0 and 4-neighbors never
/// differ by more than one cell across the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdfGrid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub origin: Vec2,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub value: f64,
    pub in_bounds: bool,
}

const FAR: f64 = f64::MAX;

/// Exact 1D squared distance transform (lower envelope of parabolas).
/// Entries equal to `FAR` are not sources.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if f[q] == FAR {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(FAR);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance (in cells) from every cell to the nearest cell where
/// `source` is true.
pub fn squared_distance_transform(width: usize, height: usize, source: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..width * height).map(|i| if source(i) { 0.0 } else { FAR }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut out = vec![0.0; width.max(height)];
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        edt_1d(row, &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    let mut col = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        edt_1d(&col, &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    grid
}

/// Build the signed field with an exact two-pass squared distance transform.
pub fn build_esdf(grid: &OccupancyGrid) -> Result<EsdfGrid, EsdfError> {
    let cells = grid.cells();
    let occupied = cells.iter().filter(|c| **c).count();
    if occupied == 0 {
        return Err(EsdfError::NoSurface("free"));
    }
    if occupied == cells.len() {
        return Err(EsdfError::NoSurface("occupied"));
    }
    let to_occ = squared_distance_transform(grid.width, grid.height, |i| cells[i]);
    let to_free = squared_distance_transform(grid.width, grid.height, |i| !cells[i]);
    let res = grid.resolution;
    let values = cells
        .iter()
        .enumerate()
        .map(|(i, occ)| if *occ { -(to_free[i].sqrt() - 1.0) * res } else { to_occ[i].sqrt() * res })
        .collect();
    Ok(EsdfGrid { resolution: res, width: grid.width, height: grid.height, origin: grid.origin, values })
}

impl EsdfGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.width + ix]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = (p - self.origin) / self.resolution;
        q.x >= 0.0 && q.y >= 0.0 && q.x <= self.width as f64 && q.y <= self.height as f64
    }

    /// Bilinear interpolation between the four surrounding cell centers,
    /// clamped to the outermost centers near the edge. Outside the grid the
    /// value is 0 with `in_bounds = false`.
    pub fn query(&self, p: Vec2) -> Query {
        if !self.contains(p) {
            return Query { value: 0.0, in_bounds: false };
        }
        let q = (p - self.origin) / self.resolution - Vec2::new(0.5, 0.5);
        let gx = q.x.clamp(0.0, (self.width - 1) as f64);
        let gy = q.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (gx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (gy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = gx - x0 as f64;
        let ty = gy - y0 as f64;
        let v00 = self.value(x0, y0);
        let v10 = self.value(x1, y0);
        let v01 = self.value(x0, y1);
        let v11 = self.value(x1, y1);
        let value = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        Query { value, in_bounds: true }
    }

    /// Largest 4-neighbor difference, in meters.
    pub fn max_neighbor_step(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.value(x, y);
                if x + 1 < self.width {
                    worst = worst.max((v - self.value(x + 1, y)).abs());
                }
                if y + 1 < self.height {
                    worst = worst.max((v - self.value(x, y + 1)).abs());
                }
            }
        }
        worst
    }

    /// Grayscale portable graymap, clipped to `[-clip, clip]` meters.
    pub fn to_pgm(&self, clip: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "P2\n{} {}\n255", self.width, self.height);
        for y in (0..self.height).rev() {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    let v = self.value(x, y).clamp(-clip, clip);
                    (((v + clip) / (2.0 * clip)) * 255.0).round().to_string()
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

impl SignedDistance for EsdfGrid {
    fn distance(&self, p: Vec2) -> f64 {
        self.query(p).value
    }
}

/// Occupancy as seen from `from`: only occupied cells struck by one of `rays`
/// evenly spaced rays within `max_range` are marked. Everything else,
/// including space hidden behind obstacles, is left free.
pub fn visible_occupancy(grid: &OccupancyGrid, from: Vec2, rays: usize, max_range: f64) -> OccupancyGrid {
    let mut seen = OccupancyGrid::new(grid.width, grid.height, grid.resolution, grid.origin);
    for k in 0..rays {
        let angle = TAU * k as f64 / rays as f64;
        if let (_, Some((ix, iy))) = trace_ray(grid, from, angle, max_range) {
            if grid.in_bounds(ix, iy) {
                seen.set(ix as usize, iy as usize, true);
            }
        }
    }
    seen
}

/// Field for the scan-visible part of the world, or open space when nothing
/// is in range.
pub fn scan_field(grid: &OccupancyGrid, from: Vec2, rays: usize, max_range: f64) -> Box<dyn SignedDistance> {
    match build_esdf(&visible_occupancy(grid, from, rays, max_range)) {
        Ok(e) => Box::new(e),
        Err(_) => Box::new(OpenSpace::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(grid: &OccupancyGrid) -> Vec<f64> {
        let (w, h) = (grid.width as i64, grid.height as i64);
        let cells = grid.cells();
        let mut out = vec![0.0; cells.len()];
        for y in 0..h {
            for x in 0..w {
                let occ = cells[(y * w + x) as usize];
                let mut best = i64::MAX;
                for yy in 0..h {
                    for xx in 0..w {
                        if cells[(yy * w + xx) as usize] != occ {
                            best = best.min((x - xx).pow(2) + (y - yy).pow(2));
                        }
                    }
                }
                let d = (best as f64).sqrt();
                out[(y * w + x) as usize] =
                    if occ { -(d - 1.0) * grid.resolution } else { d * grid.resolution };
            }
        }
        out
    }

    #[test]
    fn lone_cell() {
        let mut g = OccupancyGrid::new(9, 9, 0.1, Vec2::zeros());
        g.set(4, 4, true);
        let e = build_esdf(&g).unwrap();
        assert_eq!(e.value(5, 4), 0.1);
        assert_eq!(e.value(4, 4), 0.0);
        assert!((e.value(7, 8) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let w = rng.random_range(1..20);
            let h = rng.random_range(2..20);
            let p = rng.random_range(0.05..0.9);
            let cells: Vec<bool> = (0..w * h).map(|_| rng.random_bool(p)).collect();
            if cells.iter().all(|c| *c) || cells.iter().all(|c| !*c) {
                continue;
            }
            let g = OccupancyGrid::from_cells(w, h, 0.05, Vec2::zeros(), cells);
            assert_eq!(build_esdf(&g).unwrap().values(), brute(&g).as_slice());
        }
    }

    #[test]
    fn checkerboard() {
        let cells = vec![true, false, false, true];
        let g = OccupancyGrid::from_cells(2, 2, 0.05, Vec2::zeros(), cells);
        let e = build_esdf(&g).unwrap();
        assert_eq!(e.values(), brute(&g).as_slice());
        assert_eq!(e.value(1, 0), 0.05);
    }

    #[test]
    fn no_surface() {
        let g = OccupancyGrid::new(4, 4, 0.05, Vec2::zeros());
        assert_eq!(build_esdf(&g), Err(EsdfError::NoSurface("free")));
        let g = OccupancyGrid::from_cells(2, 2, 0.05, Vec2::zeros(), vec![true; 4]);
        assert_eq!(build_esdf(&g), Err(EsdfError::NoSurface("occupied")));
    }

    #[test]
    fn query_interpolates() {
        let mut g = OccupancyGrid::new(10, 1, 0.1, Vec2::zeros());
        g.set(0, 0, true);
        let e = build_esdf(&g).unwrap();
        let c = |i: f64| Vec2::new((i + 0.5) * 0.1, 0.05);
        assert_eq!(e.query(c(3.0)).value, e.value(3, 0));
        assert!((e.query(Vec2::new(0.4, 0.05)).value - 0.35).abs() < 1e-12);
        let out = e.query(Vec2::new(-1.0, 0.0));
        assert!(!out.in_bounds && out.value == 0.0);
    }

    #[test]
    fn visible_occupancy_hides_occluded_cells() {
        let mut g = OccupancyGrid::walled_room(6.0, 0.05);
        g.fill_rect(Vec2::new(3.0, 2.5), Vec2::new(3.2, 3.5), true);
        let seen = visible_occupancy(&g, Vec2::new(1.5, 3.0), 720, 6.0);
        assert!(seen.occupied(60, 60));
        // Wall directly behind the block is occluded.
        let (ix, iy) = g.cell_of(Vec2::new(5.97, 3.0));
        assert!(g.occupied(ix, iy) && !seen.occupied(ix, iy));
    }

    #[test]
    fn open_space_when_nothing_visible() {
        let g = OccupancyGrid::walled_room(20.0, 0.1);
        let f = scan_field(&g, Vec2::new(10.0, 10.0), 90, 6.0);
        assert_eq!(f.distance(Vec2::new(10.0, 10.0)), OpenSpace::default().clearance);
    }
}
