//! Shared fixtures for the criterion benches.

use dsnav::diffusion::{train, DiffusionConfig, DiffusionPolicy};
use dsnav::expert::{build_dataset, DataConfig, PlannerContext};
use dsnav::trajectory::Trajectory;
use dsnav::world::{generate_world, World, WorldParams};
use dsnav::{ControlPointSet, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn world() -> World {
    generate_world(7, &WorldParams::default()).expect("default world generates")
}

/// A policy with near-initial weights: timing does not depend on training.
pub fn policy() -> (DiffusionPolicy, PlannerContext) {
    let data = DataConfig { episodes: 4, samples_per_episode: 8, ..Default::default() };
    let ds = build_dataset(&data).expect("tiny dataset");
    let cfg = DiffusionConfig { max_steps: 1, ..Default::default() };
    let (p, _) = train(&ds, &cfg).expect("one step trains");
    (p, ds.samples[0].context.clone())
}

pub fn control_points(seed: u64) -> ControlPointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ControlPointSet::new((0..8).map(|i| Vec3::new(0.6 * i as f64, rng.random_range(-0.5..0.5), 0.0)).collect())
}

/// `k` gently curving candidates starting at `origin`.
pub fn candidates(origin: Vec3, k: usize, m: usize) -> Vec<Trajectory> {
    (0..k)
        .map(|j| {
            let bend = (j as f64 / k as f64 - 0.5) * 0.6;
            Trajectory::from_polyline(
                (0..m)
                    .map(|i| {
                        let s = 4.0 * i as f64 / (m - 1) as f64;
                        origin + Vec3::new(s * (bend * s / 4.0).cos(), s * (bend * s / 4.0).sin(), 0.0)
                    })
                    .collect(),
            )
        })
        .collect()
}
