//! Benchmarks, navigation metrics and the three ablation studies.

use crate::diffusion::{train, DiffusionConfig, DiffusionError, DiffusionPolicy, TrainLog};
use crate::expert::{build_dataset, DataConfig, Dataset, ExpertError};
use crate::planner::{run_episode, EpisodeResult, PlannerConfig};
use crate::geom::Vec3;
use crate::repr::{AnchorSet, RepresentationKind};
use rand_chacha::ChaCha8Rng;
use crate::seed::{config_hash, derive_seed, streams};
use crate::world::{generate_world, NoiseParams, ObstacleKind, World, WorldParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("benchmark suite must contain at least one episode")]
    EmptySuite,
    #[error("successful episode {0} has no positive shortest-path length")]
    MissingOracle(usize),
    #[error("could not generate a world for suite episode {0}")]
    World(usize),
    #[error("malformed results: {0}")]
    Parse(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub world_seed: u64,
    pub success: bool,
    pub collided: bool,
    pub steps: usize,
    pub path_length: f64,
    pub shortest_length: f64,
    pub blocked_steps: usize,
    pub heading_oscillation: f64,
}

/// Success rate in percent.
pub fn compute_sr(records: &[EpisodeRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    100.0 * records.iter().filter(|r| r.success).count() as f64 / records.len() as f64
}

/// Success weighted by path length, in percent. Failures contribute 0.
pub fn compute_spl(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for r in records {
        if !r.success {
            continue;
        }
        if !(r.shortest_length > 0.0) || !r.shortest_length.is_finite() {
            return Err(ExperimentError::MissingOracle(r.index));
        }
        sum += r.shortest_length / r.shortest_length.max(r.path_length);
    }
    Ok(100.0 * sum / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Cluttered,
    Corridor,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cluttered" => Ok(Suite::Cluttered),
            "corridor" => Ok(Suite::Corridor),
            other => Err(format!("unknown suite {other:?} (expected cluttered or corridor)")),
        }
    }
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Cluttered => "cluttered",
            Suite::Corridor => "corridor",
        }
    }

    /// World parameters for the suite, derived from the training layout.
    pub fn world_params(&self, base: &WorldParams) -> WorldParams {
        match self {
            Suite::Cluttered => base.clone(),
            Suite::Corridor => WorldParams {
                density: (base.density * 0.5).max(0.02),
                kinds: vec![ObstacleKind::Box, ObstacleKind::Wall],
                walls: (2, 3),
                ..base.clone()
            },
        }
    }
}

/// The `i`-th world of a suite. Worlds that fail to generate are skipped
/// over deterministically.
pub fn suite_world(suite: Suite, base: &WorldParams, seed: u64, i: usize) -> Result<World> {
    let params = suite.world_params(base);
    for attempt in 0..16u64 {
        let s = derive_seed(seed, streams::SUITE, (i as u64) << 4 | attempt);
        if let Ok(w) = generate_world(s, &params) {
            return Ok(w);
        }
    }
    Err(ExperimentError::World(i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub suite: Suite,
    pub records: Vec<EpisodeRecord>,
    pub sr: f64,
    pub spl: f64,
    pub mean_heading_oscillation: f64,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl BenchmarkResult {
    pub fn from_records(suite: Suite, records: Vec<EpisodeRecord>, config_hash: String) -> Result<Self> {
        let sr = compute_sr(&records);
        let spl = compute_spl(&records)?;
        let osc = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.heading_oscillation).sum::<f64>() / records.len() as f64
        };
        let seeds = records.iter().map(|r| r.world_seed).collect();
        Ok(Self { suite, records, sr, spl, mean_heading_oscillation: osc, config_hash, seeds })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RECORD_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.index,
                r.world_seed,
                r.success as u8,
                r.collided as u8,
                r.steps,
                r.path_length,
                r.shortest_length,
                r.blocked_steps,
                r.heading_oscillation
            );
        }
        s
    }
}

pub const RECORD_HEADER: &str = "episode,world_seed,success,collided,steps,path_length,shortest_length,blocked_steps,heading_oscillation";

/// Parse records written by [`BenchmarkResult::to_csv`].
pub fn parse_records(csv: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORD_HEADER => {}
        _ => return Err(ExperimentError::Parse("missing header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(ExperimentError::Parse(format!("expected 9 fields: {line}")));
            }
            let p = |e: String| ExperimentError::Parse(e);
            Ok(EpisodeRecord {
                index: f[0].parse().map_err(|e| p(format!("{e}")))?,
                world_seed: f[1].parse().map_err(|e| p(format!("{e}")))?,
                success: f[2] == "1",
                collided: f[3] == "1",
                steps: f[4].parse().map_err(|e| p(format!("{e}")))?,
                path_length: f[5].parse().map_err(|e| p(format!("{e}")))?,
                shortest_length: f[6].parse().map_err(|e| p(format!("{e}")))?,
                blocked_steps: f[7].parse().map_err(|e| p(format!("{e}")))?,
                heading_oscillation: f[8].parse().map_err(|e| p(format!("{e}")))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub suite: Suite,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { suite: Suite::Cluttered, episodes: 100, seed: 1000 }
    }
}

fn record(i: usize, world: &World, r: &EpisodeResult) -> EpisodeRecord {
    EpisodeRecord {
        index: i,
        world_seed: world.seed,
        success: r.success,
        collided: r.collided,
        steps: r.steps,
        path_length: r.path_length,
        shortest_length: r.shortest_length,
        blocked_steps: r.blocked_steps,
        heading_oscillation: r.heading_oscillation,
    }
}

/// Run `eval.episodes` seeded episodes in parallel; records come back in
/// episode order.
pub fn run_benchmark(
    policy: &DiffusionPolicy,
    world: &WorldParams,
    eval: &EvalConfig,
    planner: &PlannerConfig,
) -> Result<BenchmarkResult> {
    if eval.episodes == 0 {
        return Err(ExperimentError::EmptySuite);
    }
    let records: Vec<Result<EpisodeRecord>> = (0..eval.episodes)
        .into_par_iter()
        .map(|i| {
            let w = suite_world(eval.suite, world, eval.seed, i)?;
            let r = run_episode(policy, &w.grid, w.start, w.goal, planner, derive_seed(eval.seed, streams::EPISODE, i as u64), None)?;
            Ok(record(i, &w, &r))
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let hash = config_hash(&(world, eval, planner, &policy.config_hash));
    BenchmarkResult::from_records(eval.suite, records, hash)
}

/// Everything the ablations need: data, training, planner and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
    /// Sensor noise used for the representation study (training and evaluation).
    pub repr_noise: NoiseParams,
    pub vtoken_seeds: Vec<u64>,
    pub fractions: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            diffusion: DiffusionConfig::default(),
            planner: PlannerConfig::default(),
            eval: EvalConfig::default(),
            repr_noise: NoiseParams { enabled: true, axial_coeff: 0.02, dropout: 0.1 },
            vtoken_seeds: vec![0, 1, 2],
            fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub sr: f64,
    pub spl: f64,
    pub heading_oscillation: f64,
    pub train_loss: f64,
    pub episodes: usize,
    pub config_hash: String,
}

impl ArmResult {
    fn from_bench(label: impl Into<String>, b: &BenchmarkResult, log: &TrainLog) -> Self {
        Self {
            label: label.into(),
            sr: b.sr,
            spl: b.spl,
            heading_oscillation: b.mean_heading_oscillation,
            train_loss: log.final_loss,
            episodes: b.records.len(),
            config_hash: b.config_hash.clone(),
        }
    }
}

pub fn arms_csv(arms: &[ArmResult]) -> String {
    let mut s = String::from("arm,sr,spl,heading_oscillation,train_loss,episodes\n");
    for a in arms {
        let _ = writeln!(s, "{},{:.2},{:.2},{:.5},{:.6},{}", a.label, a.sr, a.spl, a.heading_oscillation, a.train_loss, a.episodes);
    }
    s
}

/// Train on `dataset` and benchmark, tagging the policy with its config hash.
pub fn train_and_evaluate(
    dataset: &Dataset,
    data: &DataConfig,
    diffusion: &DiffusionConfig,
    planner: &PlannerConfig,
    eval: &EvalConfig,
) -> Result<(DiffusionPolicy, TrainLog, BenchmarkResult)> {
    let (mut policy, log) = train(dataset, diffusion)?;
    policy.config_hash = config_hash(&(data, diffusion));
    let bench = run_benchmark(&policy, &data.world, eval, planner)?;
    Ok((policy, log, bench))
}

/// Same data and suites for the three output representations, with noisier
/// far-field sensing.
pub fn ablate_representation(cfg: &AblationConfig) -> Result<Vec<ArmResult>> {
    let mut out = Vec::new();
    for kind in RepresentationKind::ALL {
        let data = DataConfig { representation: kind, noise: cfg.repr_noise, ..cfg.data.clone() };
        let planner = PlannerConfig { noise: cfg.repr_noise, ..cfg.planner.clone() };
        let ds = build_dataset(&data)?;
        let (_, log, bench) = train_and_evaluate(&ds, &data, &cfg.diffusion, &planner, &cfg.eval)?;
        out.push(ArmResult::from_bench(kind.as_str(), &bench, &log));
    }
    Ok(out)
}

/// With and without the previous-heading token, over several training seeds.
/// The "without" arm trains and plans with the null flag always set.
pub fn ablate_vtoken(cfg: &AblationConfig) -> Result<Vec<ArmResult>> {
    let base = build_dataset(&cfg.data)?;
    let mut nulled = base.clone();
    for s in &mut nulled.samples {
        s.context.v_null = true;
    }
    let mut out = Vec::new();
    for (label, ds, use_token) in [("with_token", &base, true), ("without_token", &nulled, false)] {
        let planner = PlannerConfig { use_vtoken: use_token, ..cfg.planner.clone() };
        let mut records = Vec::new();
        let mut loss = 0.0;
        for seed in &cfg.vtoken_seeds {
            let diffusion = DiffusionConfig { seed: *seed, ..cfg.diffusion.clone() };
            let (_, log, bench) = train_and_evaluate(ds, &cfg.data, &diffusion, &planner, &cfg.eval)?;
            loss += log.final_loss / cfg.vtoken_seeds.len() as f64;
            let offset = records.len();
            records.extend(bench.records.into_iter().map(|mut r| {
                r.index += offset;
                r
            }));
        }
        let bench = BenchmarkResult::from_records(cfg.eval.suite, records, config_hash(&(label, &cfg.planner)))?;
        let log = TrainLog { final_loss: loss, ..Default::default() };
        out.push(ArmResult::from_bench(label, &bench, &log));
    }
    Ok(out)
}

/// Train on growing episode prefixes of one dataset.
pub fn ablate_scaling(cfg: &AblationConfig) -> Result<Vec<ArmResult>> {
    let full = build_dataset(&cfg.data)?;
    let mut out = Vec::new();
    for f in &cfg.fractions {
        let ds = full.episode_prefix(*f);
        let (_, log, bench) = train_and_evaluate(&ds, &cfg.data, &cfg.diffusion, &cfg.planner, &cfg.eval)?;
        out.push(ArmResult::from_bench(format!("{:.0}%", f * 100.0), &bench, &log));
    }
    Ok(out)
}

/// Mean displacement curves for a bent path when the last four anchors
/// are moved: B-spline control points versus interpolating-cubic nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSupportStudy {
    /// Arc length at the end of the first knot span of the clean B-spline.
    pub span_end: f64,
    pub bspline: Vec<(f64, f64)>,
    pub cubic: Vec<(f64, f64)>,
    /// Mean and max displacement over the first span.
    pub bspline_first_span: (f64, f64),
    pub cubic_first_span: (f64, f64),
}

/// Quarter-circle of radius 3 m followed by a 1.5 m straight, 64 samples.
pub fn bent_path() -> Vec<Vec3> {
    let mut pts: Vec<Vec3> = (0..48)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_2 * k as f64 / 47.0;
            Vec3::new(3.0 * a.sin(), 3.0 * (1.0 - a.cos()), 0.0)
        })
        .collect();
    pts.extend((1..=16).map(|k| Vec3::new(3.0, 3.0 + 1.5 * k as f64 / 16.0, 0.0)));
    pts
}

pub fn local_support_study(seed: u64, draws: usize, radius: f64) -> std::result::Result<LocalSupportStudy, crate::spline::SplineError> {
    use crate::repr::{arclength_displacement, decode_interpolating_cubic, random_disk_offset};
    use crate::spline::{ControlPointSet, SplineSpec};
    use crate::trajectory::Trajectory;
    use rand::SeedableRng;

    let spec = SplineSpec::cubic8();
    let fit = spec.fit_least_squares(&bent_path())?;
    let clean = fit.control_points;
    let dense = |cps: &ControlPointSet| -> std::result::Result<Trajectory, crate::spline::SplineError> {
        let n = 2001;
        let (lo, hi) = spec.domain();
        let pts = (0..n)
            .map(|k| spec.evaluate(cps, lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Trajectory::from_polyline(pts))
    };
    let clean_b = dense(&clean)?;
    let u_span = spec.knots[spec.degree + 1];
    let span_end = {
        let n = 2001;
        let (lo, hi) = spec.domain();
        let k = (((u_span - lo) / (hi - lo)) * (n - 1) as f64).round() as usize;
        clean_b.arc_length[k]
    };
    // Cubic anchors are nodes on the path, as in its training labels.
    let nodes = crate::geom::resample_polyline(&bent_path(), clean.points.len());
    let clean_c = decode_interpolating_cubic(&AnchorSet::new(nodes.clone()).expect("eight anchors"), 2001).expect("valid nodes");
    let ds = 0.01;
    let s_max = clean_b.total_length().min(clean_c.total_length());
    let bins = (s_max / ds).floor() as usize + 1;
    let mut acc_b = vec![0.0; bins];
    let mut acc_c = vec![0.0; bins];
    let mut cnt_b = vec![0usize; bins];
    let mut cnt_c = vec![0usize; bins];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws.max(1) {
        // The same offsets move the trailing B-spline control points and
        // the trailing cubic nodes.
        let mut pert = clean.clone();
        let mut moved = nodes.clone();
        for k in 4..pert.points.len() {
            let o = random_disk_offset(&mut rng, radius);
            pert.points[k] += o;
            moved[k] += o;
        }
        let pb = dense(&pert)?;
        let pc = decode_interpolating_cubic(&AnchorSet::new(moved).expect("eight anchors"), 2001).expect("valid nodes");
        for (s, d) in arclength_displacement(&clean_b, &pb, ds, s_max) {
            let k = (s / ds).round() as usize;
            if k < bins {
                acc_b[k] += d;
                cnt_b[k] += 1;
            }
        }
        for (s, d) in arclength_displacement(&clean_c, &pc, ds, s_max) {
            let k = (s / ds).round() as usize;
            if k < bins {
                acc_c[k] += d;
                cnt_c[k] += 1;
            }
        }
    }
    let curve = |acc: &[f64], cnt: &[usize]| -> Vec<(f64, f64)> {
        (0..bins).filter(|k| cnt[*k] > 0).map(|k| (k as f64 * ds, acc[k] / cnt[k] as f64)).collect()
    };
    let bspline = curve(&acc_b, &cnt_b);
    let cubic = curve(&acc_c, &cnt_c);
    let first = |c: &[(f64, f64)]| {
        let v: Vec<f64> = c.iter().filter(|(s, _)| *s <= span_end).map(|(_, d)| *d).collect();
        (v.iter().sum::<f64>() / v.len().max(1) as f64, v.iter().copied().fold(0.0, f64::max))
    };
    Ok(LocalSupportStudy {
        span_end,
        bspline_first_span: first(&bspline),
        cubic_first_span: first(&cubic),
        bspline,
        cubic,
    })
}

/// Parse the table written by [`arms_csv`].
pub fn parse_arms(csv: &str) -> Result<Vec<ArmResult>> {
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h.starts_with("arm,sr,spl") => {}
        _ => return Err(ExperimentError::Parse("missing arm header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(ExperimentError::Parse(format!("expected 6 fields: {line}")));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| ExperimentError::Parse(format!("{e}: {line}")));
            Ok(ArmResult {
                label: f[0].to_string(),
                sr: num(1)?,
                spl: num(2)?,
                heading_oscillation: num(3)?,
                train_loss: num(4)?,
                episodes: f[5].parse().map_err(|e| ExperimentError::Parse(format!("{e}: {line}")))?,
                config_hash: String::new(),
            })
        })
        .collect()
}
