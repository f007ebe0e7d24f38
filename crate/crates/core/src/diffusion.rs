//! Conditional denoising diffusion over flattened anchor sets: variance
//! preserving noise schedule, v-prediction, an MLP denoiser with exact
//! gradients, Adam, and ancestral / deterministic reverse samplers.

use crate::expert::{Dataset, PlannerContext};
use crate::repr::{AnchorSet, RepresentationKind, ANCHOR_COUNT};
use crate::seed::{derive_seed, streams};
use crate::spline::ControlPointSet;
use crate::geom::{Vec2, Vec3};
use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDPC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LATENT_DIM: usize = ANCHOR_COUNT * 3;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("diffusion step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl ScheduleKind {
    fn code(self) -> u8 {
        match self {
            ScheduleKind::Cosine => 0,
            ScheduleKind::Linear => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ScheduleKind::Cosine),
            1 => Some(ScheduleKind::Linear),
            _ => None,
        }
    }
}

/// `alpha[s]`, `sigma[s]` for `s = 0..=S`; index 0 is the clean end.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    steps: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(DiffusionError::TooFewSteps(steps));
    }
    let (alpha, sigma) = (0..=steps)
        .map(|s| {
            let t = s as f64 / steps as f64;
            match kind {
                ScheduleKind::Cosine => {
                    let a = (t + 0.008) / 1.008 * FRAC_PI_2;
                    (a.cos(), a.sin())
                }
                ScheduleKind::Linear => ((1.0 - t).sqrt(), t.sqrt()),
            }
        })
        .unzip();
    Ok(NoiseSchedule { kind, steps, alpha, sigma })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, s: usize) -> f64 {
        self.alpha[s]
    }

    pub fn sigma(&self, s: usize) -> f64 {
        self.sigma[s]
    }

    fn check(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.steps {
            return Err(DiffusionError::StepOutOfRange { step: s, max: self.steps });
        }
        Ok(())
    }

    /// `alpha_s * x0 + sigma_s * eps`.
    pub fn forward_noise(&self, x0: &[f64], s: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(s)?;
        same_len(x0, eps)?;
        let (a, g) = (self.alpha[s], self.sigma[s]);
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + g * e).collect())
    }

    /// `alpha_s * eps - sigma_s * x0`.
    pub fn v_target(&self, x0: &[f64], eps: &[f64], s: usize) -> Result<Vec<f64>> {
        self.check(s)?;
        same_len(x0, eps)?;
        let (a, g) = (self.alpha[s], self.sigma[s]);
        Ok(x0.iter().zip(eps).map(|(x, e)| a * e - g * x).collect())
    }

    /// `alpha_s * x_s - sigma_s * v`.
    pub fn x0_from_v(&self, xs: &[f64], v: &[f64], s: usize) -> Result<Vec<f64>> {
        self.check(s)?;
        same_len(xs, v)?;
        let (a, g) = (self.alpha[s], self.sigma[s]);
        Ok(xs.iter().zip(v).map(|(x, v)| a * x - g * v).collect())
    }

    /// `sigma_s * x_s + alpha_s * v`.
    pub fn eps_from_v(&self, xs: &[f64], v: &[f64], s: usize) -> Result<Vec<f64>> {
        self.check(s)?;
        same_len(xs, v)?;
        let (a, g) = (self.alpha[s], self.sigma[s]);
        Ok(xs.iter().zip(v).map(|(x, v)| g * x + a * v).collect())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(DiffusionError::DimMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Sinusoidal embedding of the integer step with geometric frequencies.
pub fn timestep_embedding(s: usize, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let w = (-(k as f64) * (1000f64).ln() / freqs as f64).exp();
        let a = s as f64 * w;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub latent: usize,
    pub context: usize,
    pub time_freqs: usize,
    pub hidden: usize,
}

impl NetDims {
    pub fn input(&self) -> usize {
        self.latent + 2 * self.time_freqs + self.context
    }

    /// `(fan_in, fan_out)` of each dense layer.
    pub fn layers(&self) -> [(usize, usize); 4] {
        [(self.input(), self.hidden), (self.hidden, self.hidden), (self.hidden, self.hidden), (self.hidden, self.latent)]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum::<usize>() + self.hidden
    }
}

/// Four dense layers with SiLU between them. All parameters live in one flat
/// buffer: per layer a column-major `fan_in x fan_out` weight then a bias,
/// followed by the null-token vector added to the first pre-activation of
/// rows whose previous-heading input is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub dims: NetDims,
    pub params: Vec<f64>,
}

struct Cache {
    /// Layer inputs (input, a1, a2, a3).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the three hidden layers.
    pre: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

impl Denoiser {
    /// LeCun-normal hidden layers; zero head, biases and null token.
    pub fn new(dims: NetDims, rng: &mut impl Rng) -> Self {
        let mut params = vec![0.0; dims.param_count()];
        let mut off = 0;
        for (l, (fi, fo)) in dims.layers().iter().enumerate() {
            let std = (1.0 / *fi as f64).sqrt();
            for p in &mut params[off..off + fi * fo] {
                if l < 3 {
                    *p = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            off += fi * fo + fo;
        }
        Self { dims, params }
    }

    /// Overwrite every parameter with `N(0, scale^2)` draws.
    pub fn randomize(&mut self, rng: &mut impl Rng, scale: f64) {
        for p in &mut self.params {
            *p = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn offsets(&self) -> ([(usize, usize); 4], usize) {
        let mut offs = [(0, 0); 4];
        let mut off = 0;
        for (l, (fi, fo)) in self.dims.layers().iter().enumerate() {
            offs[l] = (off, off + fi * fo);
            off += fi * fo + fo;
        }
        (offs, off)
    }

    fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        let (offs, _) = self.offsets();
        let (fi, fo) = self.dims.layers()[l];
        DMatrixView::from_slice(&self.params[offs[l].0..offs[l].0 + fi * fo], fi, fo)
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (offs, _) = self.offsets();
        let fo = self.dims.layers()[l].1;
        &self.params[offs[l].1..offs[l].1 + fo]
    }

    fn null_token(&self) -> &[f64] {
        let (_, end) = self.offsets();
        &self.params[end..end + self.dims.hidden]
    }

    fn forward_cache(&self, x: &DMatrix<f64>, null: &[bool]) -> Cache {
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(3);
        let mut h = x.clone();
        for l in 0..4 {
            let mut z = &h * self.weight(l);
            for (j, b) in self.bias(l).iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*b);
            }
            if l == 0 {
                let tok = self.null_token();
                for (r, n) in null.iter().enumerate() {
                    if *n {
                        for (j, t) in tok.iter().enumerate() {
                            z[(r, j)] += t;
                        }
                    }
                }
            }
            if l < 3 {
                h = z.map(silu);
                pre.push(z);
                inputs.push(h.clone());
            } else {
                return Cache { inputs: inputs[..4].to_vec(), pre, out: z };
            }
        }
        unreachable!()
    }

    /// Rows of `x` are `[x_s | time embedding | context]`.
    pub fn predict(&self, x: &DMatrix<f64>, null: &[bool]) -> DMatrix<f64> {
        self.forward_cache(x, null).out
    }

    /// Mean squared error per element against `target`.
    pub fn loss(&self, x: &DMatrix<f64>, null: &[bool], target: &DMatrix<f64>) -> f64 {
        let out = self.predict(x, null);
        (out - target).norm_squared() / (target.nrows() * target.ncols()) as f64
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, null: &[bool], target: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let cache = self.forward_cache(x, null);
        let count = (target.nrows() * target.ncols()) as f64;
        let diff = &cache.out - target;
        let loss = diff.norm_squared() / count;
        let mut grad = vec![0.0; self.params.len()];
        let (offs, end) = self.offsets();
        let mut delta = diff * (2.0 / count);
        for l in (0..4).rev() {
            let (fi, fo) = self.dims.layers()[l];
            let gw = cache.inputs[l].transpose() * &delta;
            grad[offs[l].0..offs[l].0 + fi * fo].copy_from_slice(gw.as_slice());
            for j in 0..fo {
                grad[offs[l].1 + j] = delta.column(j).sum();
            }
            if l == 0 {
                for (r, n) in null.iter().enumerate() {
                    if *n {
                        for j in 0..fo {
                            grad[end + j] += delta[(r, j)];
                        }
                    }
                }
                break;
            }
            let mut back = &delta * self.weight(l).transpose();
            back.zip_apply(&cache.pre[l - 1], |d, z| *d *= silu_grad(z));
            delta = back;
        }
        (loss, grad)
    }
}

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Latent scaling and per-feature context standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub latent_scale: f64,
    pub ctx_mean: Vec<f64>,
    pub ctx_std: Vec<f64>,
}

/// Raw context features: goal, previous heading, ranges.
pub fn raw_context(ctx: &PlannerContext) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 + ctx.ranges.len());
    f.extend([ctx.goal.x, ctx.goal.y, ctx.v_prev.x, ctx.v_prev.y]);
    f.extend(&ctx.ranges);
    f
}

impl Normalizer {
    pub fn fit(dataset: &Dataset, latent_scale: f64) -> Self {
        let dim = 4 + dataset.beams;
        let n = dataset.samples.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for s in &dataset.samples {
            for (i, v) in raw_context(&s.context).iter().enumerate() {
                mean[i] += v;
                sq[i] += v * v;
            }
        }
        let mut std = vec![1.0; dim];
        for i in 0..dim {
            mean[i] /= n;
            let var = (sq[i] / n - mean[i] * mean[i]).max(0.0);
            std[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { latent_scale, ctx_mean: mean, ctx_std: std }
    }

    /// Standardized features; the heading entries are zeroed when null.
    pub fn context(&self, ctx: &PlannerContext) -> Vec<f64> {
        let mut f: Vec<f64> = raw_context(ctx)
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.ctx_mean[i]) / self.ctx_std[i])
            .collect();
        if ctx.v_null {
            f[2] = 0.0;
            f[3] = 0.0;
        }
        f
    }

    pub fn encode(&self, anchors: &[Vec3]) -> Vec<f64> {
        anchors.iter().flat_map(|p| [p.x, p.y, p.z]).map(|v| v / self.latent_scale).collect()
    }

    /// Back to meters, with the first point pinned to the origin and z = 0.
    pub fn decode(&self, latent: &[f64]) -> ControlPointSet {
        let mut pts: Vec<Vec3> = latent
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0] * self.latent_scale, c[1] * self.latent_scale, 0.0))
            .collect();
        pts[0] = Vec3::zeros();
        ControlPointSet::new(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub hidden: usize,
    pub time_freqs: usize,
    pub latent_scale: f64,
    pub lr: f64,
    /// Learning rate at the end of a cosine decay, as a fraction of `lr`.
    pub lr_final_fraction: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Overrides `epochs` when non-zero.
    pub max_steps: usize,
    pub validation_fraction: f64,
    /// Predicted clean latents are clipped to this magnitude while sampling.
    pub x0_clip: f64,
    /// Std of a random rotation (radians) applied to the previous-heading
    /// token of each training row.
    pub vprev_jitter: f64,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            schedule: ScheduleKind::Cosine,
            hidden: 256,
            time_freqs: 8,
            latent_scale: 6.0,
            lr: 1e-3,
            lr_final_fraction: 0.1,
            batch: 256,
            epochs: 150,
            max_steps: 0,
            validation_fraction: 0.05,
            x0_clip: 2.0,
            vprev_jitter: 0.5,
            seed: 0,
        }
    }
}

/// Trained denoiser with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub net: Denoiser,
    pub schedule: NoiseSchedule,
    pub norm: Normalizer,
    pub kind: RepresentationKind,
    pub x0_clip: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub validation_loss: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Ancestral,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub candidates: Vec<ControlPointSet>,
    /// Denoiser evaluations per candidate.
    pub reverse_steps: usize,
}

/// Training rows: inputs, v targets and null flags for a set of
/// (sample, step, noise) triples.
pub struct TrainBatch {
    pub x: DMatrix<f64>,
    pub target: DMatrix<f64>,
    pub null: Vec<bool>,
}

impl DiffusionPolicy {
    pub fn new(dims: NetDims, cfg: &DiffusionConfig, norm: Normalizer, kind: RepresentationKind) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::INIT, 0));
        Ok(Self {
            net: Denoiser::new(dims, &mut rng),
            schedule: make_schedule(cfg.steps, cfg.schedule)?,
            norm,
            kind,
            x0_clip: cfg.x0_clip,
            config_hash: String::new(),
        })
    }

    fn row_input(&self, latent: &[f64], s: usize, ctx: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.net.dims.input());
        row.extend_from_slice(latent);
        row.extend(timestep_embedding(s, self.net.dims.time_freqs));
        row.extend_from_slice(ctx);
        row
    }

    /// Predicted v for one latent.
    pub fn denoise(&self, xs: &[f64], ctx: &PlannerContext, s: usize) -> Result<Vec<f64>> {
        self.schedule.check(s)?;
        if xs.len() != self.net.dims.latent {
            return Err(DiffusionError::DimMismatch { expected: self.net.dims.latent, got: xs.len() });
        }
        let c = self.norm.context(ctx);
        if c.len() != self.net.dims.context {
            return Err(DiffusionError::DimMismatch { expected: self.net.dims.context, got: c.len() });
        }
        let x = DMatrix::from_row_slice(1, self.net.dims.input(), &self.row_input(xs, s, &c));
        Ok(self.net.predict(&x, &[ctx.v_null]).row(0).iter().copied().collect())
    }

    /// Assemble a batch with the given per-row steps and noise.
    pub fn make_batch(&self, rows: &[(&PlannerContext, &AnchorSet, usize, Vec<f64>)]) -> TrainBatch {
        let d = self.net.dims;
        let mut x = DMatrix::zeros(rows.len(), d.input());
        let mut target = DMatrix::zeros(rows.len(), d.latent);
        let mut null = Vec::with_capacity(rows.len());
        for (r, (ctx, anchors, s, eps)) in rows.iter().enumerate() {
            let x0 = self.norm.encode(anchors.points());
            let xs = self.schedule.forward_noise(&x0, *s, eps).expect("valid step");
            let v = self.schedule.v_target(&x0, eps, *s).expect("valid step");
            let c = self.norm.context(ctx);
            for (j, val) in self.row_input(&xs, *s, &c).into_iter().enumerate() {
                x[(r, j)] = val;
            }
            for (j, val) in v.into_iter().enumerate() {
                target[(r, j)] = val;
            }
            null.push(ctx.v_null);
        }
        TrainBatch { x, target, null }
    }

    fn random_rows<'a>(
        &self,
        samples: &'a [crate::expert::DemoSample],
        idx: &[usize],
        rng: &mut impl Rng,
    ) -> Vec<(&'a PlannerContext, &'a AnchorSet, usize, Vec<f64>)> {
        idx.iter()
            .map(|&i| {
                let s = rng.random_range(1..=self.schedule.steps);
                let eps: Vec<f64> = (0..self.net.dims.latent).map(|_| rng.sample(StandardNormal)).collect();
                (&samples[i].context, &samples[i].anchors, s, eps)
            })
            .collect()
    }

    /// Mean v-loss over `samples` with a fixed draw of steps and noise.
    pub fn evaluate_loss(&self, samples: &[crate::expert::DemoSample], seed: u64, repeats: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..samples.len()).collect();
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..repeats.max(1) {
            for chunk in idx.chunks(512) {
                let rows = self.random_rows(samples, chunk, &mut rng);
                let b = self.make_batch(&rows);
                total += self.net.loss(&b.x, &b.null, &b.target) * chunk.len() as f64;
                count += chunk.len();
            }
        }
        total / count.max(1) as f64
    }

    /// Deterministic candidate generation from explicit initial noise rows
    /// at level `start_step`, with no further randomness.
    pub fn denoise_from(&self, init: &DMatrix<f64>, start_step: usize, ctx: &PlannerContext) -> Result<SampleOutput> {
        self.reverse_chain(init.clone(), start_step, ctx, SamplerMode::Deterministic, &mut [])
    }

    fn reverse_chain(
        &self,
        mut xs: DMatrix<f64>,
        start_step: usize,
        ctx: &PlannerContext,
        mode: SamplerMode,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<SampleOutput> {
        self.schedule.check(start_step)?;
        let k = xs.nrows();
        let d = self.net.dims;
        let c = self.norm.context(ctx);
        if c.len() != d.context {
            return Err(DiffusionError::DimMismatch { expected: d.context, got: c.len() });
        }
        let null = vec![ctx.v_null; k];
        let mut input = DMatrix::zeros(k, d.input());
        for r in 0..k {
            for (j, v) in c.iter().enumerate() {
                input[(r, d.latent + 2 * d.time_freqs + j)] = *v;
            }
        }
        let mut steps = 0;
        let mut s = start_step;
        loop {
            let emb = timestep_embedding(s, d.time_freqs);
            for r in 0..k {
                for j in 0..d.latent {
                    input[(r, j)] = xs[(r, j)];
                }
                for (j, v) in emb.iter().enumerate() {
                    input[(r, d.latent + j)] = *v;
                }
            }
            let v = self.net.predict(&input, &null);
            steps += 1;
            let (a, g) = (self.schedule.alpha(s), self.schedule.sigma(s));
            let mut x0 = &xs * a - &v * g;
            if self.x0_clip > 0.0 {
                x0.apply(|e| *e = e.clamp(-self.x0_clip, self.x0_clip));
            }
            if s == 1 {
                xs = x0;
                break;
            }
            let eps = (&xs - &x0 * a) / g;
            let (ap, gp) = (self.schedule.alpha(s - 1), self.schedule.sigma(s - 1));
            xs = match mode {
                SamplerMode::Deterministic => &x0 * ap + &eps * gp,
                SamplerMode::Ancestral => {
                    let a_ts = a / ap;
                    let var_ts = (g * g - a_ts * a_ts * gp * gp).max(0.0);
                    let c_x = a_ts * gp * gp / (g * g);
                    let c_0 = ap * var_ts / (g * g);
                    let std = (var_ts * gp * gp / (g * g)).sqrt();
                    let mut next = &xs * c_x + &x0 * c_0;
                    for (r, rng) in rngs.iter_mut().enumerate() {
                        for j in 0..d.latent {
                            next[(r, j)] += std * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    next
                }
            };
            s -= 1;
        }
        let candidates = (0..k)
            .map(|r| self.norm.decode(&xs.row(r).iter().copied().collect::<Vec<_>>()))
            .collect();
        Ok(SampleOutput { candidates, reverse_steps: steps })
    }

    fn candidate_rngs(k: usize, rng: &mut impl Rng) -> Vec<ChaCha8Rng> {
        (0..k).map(|_| ChaCha8Rng::seed_from_u64(rng.random())).collect()
    }

    /// `k` candidates from pure noise through all `S` reverse steps.
    pub fn sample(&self, ctx: &PlannerContext, k: usize, rng: &mut impl Rng, mode: SamplerMode) -> Result<SampleOutput> {
        let mut rngs = Self::candidate_rngs(k.max(1), rng);
        let d = self.net.dims.latent;
        let mut init = DMatrix::zeros(rngs.len(), d);
        for (r, cr) in rngs.iter_mut().enumerate() {
            for j in 0..d {
                init[(r, j)] = cr.sample(StandardNormal);
            }
        }
        self.reverse_chain(init, self.schedule.steps, ctx, mode, &mut rngs)
    }

    /// Re-noise `prev` to level `start_step` (fresh noise per candidate) and
    /// denoise from there.
    pub fn warm_start_sample(
        &self,
        prev: &ControlPointSet,
        ctx: &PlannerContext,
        k: usize,
        start_step: usize,
        rng: &mut impl Rng,
        mode: SamplerMode,
    ) -> Result<SampleOutput> {
        self.schedule.check(start_step)?;
        let x0 = self.norm.encode(&prev.points);
        if x0.len() != self.net.dims.latent {
            return Err(DiffusionError::DimMismatch { expected: self.net.dims.latent, got: x0.len() });
        }
        let mut rngs = Self::candidate_rngs(k.max(1), rng);
        let (a, g) = (self.schedule.alpha(start_step), self.schedule.sigma(start_step));
        let mut init = DMatrix::zeros(rngs.len(), x0.len());
        for (r, cr) in rngs.iter_mut().enumerate() {
            for (j, v) in x0.iter().enumerate() {
                init[(r, j)] = a * v + g * cr.sample::<f64, _>(StandardNormal);
            }
        }
        self.reverse_chain(init, start_step, ctx, mode, &mut rngs)
    }
}

/// Train a fresh policy on `dataset`. The trailing `validation_fraction` of
/// samples (by episode order) is held out for the validation loss.
pub fn train(dataset: &Dataset, cfg: &DiffusionConfig) -> Result<(DiffusionPolicy, TrainLog)> {
    train_with_progress(dataset, cfg, |_, _| {})
}

pub fn train_with_progress(
    dataset: &Dataset,
    cfg: &DiffusionConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(DiffusionPolicy, TrainLog)> {
    if dataset.samples.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let n_val = if dataset.samples.len() > 20 {
        (dataset.samples.len() as f64 * cfg.validation_fraction).floor() as usize
    } else {
        0
    };
    let (train_s, val_s) = dataset.samples.split_at(dataset.samples.len() - n_val);
    let norm = Normalizer::fit(dataset, cfg.latent_scale);
    let dims = NetDims {
        latent: LATENT_DIM,
        context: 4 + dataset.beams,
        time_freqs: cfg.time_freqs,
        hidden: cfg.hidden,
    };
    let mut policy = DiffusionPolicy::new(dims, cfg, norm, dataset.kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::TRAIN, 0));
    let mut adam = Adam::new(policy.net.params.len());
    let batch = cfg.batch.max(1);
    let per_epoch = train_s.len().div_ceil(batch);
    let total_steps = if cfg.max_steps > 0 { cfg.max_steps } else { cfg.epochs.max(1) * per_epoch };
    let mut log = TrainLog { initial_loss: policy.evaluate_loss(train_s, 1, 1), ..Default::default() };

    let mut order: Vec<usize> = (0..train_s.len()).collect();
    let mut cursor = order.len();
    let mut epoch_sum = 0.0;
    let mut epoch_n = 0;
    for step in 0..total_steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch).min(order.len());
        let mut idx = order[cursor..end].to_vec();
        cursor = end;
        if order.len() < batch {
            // Tiny datasets: fill the batch by repetition.
            idx = (0..batch).map(|i| idx[i % idx.len()]).collect();
        }
        let rows = policy.random_rows(train_s, &idx, &mut rng);
        let b = if cfg.vprev_jitter > 0.0 {
            let jittered: Vec<PlannerContext> = rows
                .iter()
                .map(|(ctx, ..)| {
                    let mut c = (*ctx).clone();
                    let a: f64 = cfg.vprev_jitter * rng.sample::<f64, _>(StandardNormal);
                    let (sn, cs) = a.sin_cos();
                    c.v_prev = Vec2::new(cs * c.v_prev.x - sn * c.v_prev.y, sn * c.v_prev.x + cs * c.v_prev.y);
                    c
                })
                .collect();
            let rows: Vec<_> = rows.iter().zip(&jittered).map(|((_, a, s, e), c)| (c, *a, *s, e.clone())).collect();
            policy.make_batch(&rows)
        } else {
            policy.make_batch(&rows)
        };
        let (loss, grad) = policy.net.loss_and_grad(&b.x, &b.null, &b.target);
        if !loss.is_finite() {
            return Err(DiffusionError::Diverged { step, loss });
        }
        let progress_frac = step as f64 / total_steps.max(1) as f64;
        let lr = cfg.lr
            * (cfg.lr_final_fraction
                + (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress_frac).cos()));
        adam.step(&mut policy.net.params, &grad, lr);
        epoch_sum += loss;
        epoch_n += 1;
        if cursor >= order.len() || step + 1 == total_steps {
            let mean = epoch_sum / epoch_n as f64;
            log.epoch_loss.push(mean);
            progress(log.epoch_loss.len(), mean);
            epoch_sum = 0.0;
            epoch_n = 0;
        }
    }
    log.steps = total_steps;
    log.final_loss = policy.evaluate_loss(train_s, 1, 1);
    if !val_s.is_empty() {
        log.validation_loss = Some(policy.evaluate_loss(val_s, 2, 4));
    }
    Ok((policy, log))
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl DiffusionPolicy {
    /// Magic, version, architecture and schedule, normalization stats,
    /// config hash, then the flat parameter blob. Little-endian.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let d = self.net.dims;
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        for v in [d.latent, d.context, d.time_freqs, d.hidden, self.schedule.steps] {
            put_u32(&mut w, v as u32)?;
        }
        w.write_all(&[self.schedule.kind.code(), self.kind.code()])?;
        put_f64s(&mut w, &[self.norm.latent_scale, self.x0_clip])?;
        put_f64s(&mut w, &self.norm.ctx_mean)?;
        put_f64s(&mut w, &self.norm.ctx_std)?;
        put_u32(&mut w, self.config_hash.len() as u32)?;
        w.write_all(self.config_hash.as_bytes())?;
        w.write_all(&(self.net.params.len() as u64).to_le_bytes())?;
        put_f64s(&mut w, &self.net.params)?;
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(DiffusionError::Format("bad magic".into()));
        }
        if get_u32(&mut r)? != CHECKPOINT_VERSION {
            return Err(DiffusionError::Format("unsupported version".into()));
        }
        let mut f = [0usize; 5];
        for v in f.iter_mut() {
            *v = get_u32(&mut r)? as usize;
        }
        let dims = NetDims { latent: f[0], context: f[1], time_freqs: f[2], hidden: f[3] };
        if dims.latent != LATENT_DIM {
            return Err(DiffusionError::DimMismatch { expected: LATENT_DIM, got: dims.latent });
        }
        let mut codes = [0u8; 2];
        r.read_exact(&mut codes)?;
        let sk = ScheduleKind::from_code(codes[0]).ok_or_else(|| DiffusionError::Format("schedule".into()))?;
        let kind = RepresentationKind::from_code(codes[1]).ok_or_else(|| DiffusionError::Format("representation".into()))?;
        let head = get_f64s(&mut r, 2)?;
        let ctx_mean = get_f64s(&mut r, dims.context)?;
        let ctx_std = get_f64s(&mut r, dims.context)?;
        let hl = get_u32(&mut r)? as usize;
        let mut hash = vec![0u8; hl];
        r.read_exact(&mut hash)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != dims.param_count() {
            return Err(DiffusionError::DimMismatch { expected: dims.param_count(), got: n });
        }
        let params = get_f64s(&mut r, n)?;
        Ok(Self {
            net: Denoiser { dims, params },
            schedule: make_schedule(f[4], sk)?,
            norm: Normalizer { latent_scale: head[0], ctx_mean, ctx_std },
            kind,
            x0_clip: head[1],
            config_hash: String::from_utf8(hash).map_err(|e| DiffusionError::Format(e.to_string()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::DemoSample;
    use crate::geom::{Pose2, Vec2};

    fn ctx(beams: usize) -> PlannerContext {
        PlannerContext { goal: Vec2::new(3.0, 1.0), v_prev: Vec2::new(1.0, 0.0), v_null: false, ranges: vec![2.0; beams] }
    }

    #[test]
    fn schedules() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(10, kind).unwrap();
            for i in 0..=10 {
                assert!((s.alpha(i).powi(2) + s.sigma(i).powi(2) - 1.0).abs() < 1e-12);
                if i > 0 {
                    assert!(s.alpha(i) <= s.alpha(i - 1));
                }
            }
            assert!(s.sigma(10) >= 0.99);
        }
        let lin = make_schedule(2, ScheduleKind::Linear).unwrap();
        assert!(lin.alpha(1) > lin.alpha(2));
        assert!(matches!(make_schedule(1, ScheduleKind::Cosine), Err(DiffusionError::TooFewSteps(1))));
    }

    #[test]
    fn forward_and_target_edges() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let x0 = vec![0.5, -1.0];
        let zero = vec![0.0, 0.0];
        assert_eq!(s.forward_noise(&x0, 3, &zero).unwrap(), vec![s.alpha(3) * 0.5, -s.alpha(3)]);
        assert_eq!(s.v_target(&x0, &zero, 3).unwrap(), vec![-s.sigma(3) * 0.5, s.sigma(3)]);
        assert!(s.forward_noise(&x0, 0, &zero).is_err());
        assert!(s.forward_noise(&x0, 11, &zero).is_err());
    }

    #[test]
    fn zero_head_outputs_zero() {
        let dims = NetDims { latent: LATENT_DIM, context: 68, time_freqs: 8, hidden: 32 };
        let net = Denoiser::new(dims, &mut ChaCha8Rng::seed_from_u64(0));
        let x = DMatrix::from_element(3, dims.input(), 0.3);
        assert!(net.predict(&x, &[false, true, false]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_gradient_check() {
        let dims = NetDims { latent: 6, context: 3, time_freqs: 2, hidden: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Denoiser::new(dims, &mut rng);
        net.randomize(&mut rng, 0.5);
        let x = DMatrix::from_fn(3, dims.input(), |_, _| rng.sample(StandardNormal));
        let t = DMatrix::from_fn(3, dims.latent, |_, _| rng.sample(StandardNormal));
        let null = [true, false, true];
        let (_, g) = net.loss_and_grad(&x, &null, &t);
        let h = 1e-5;
        for i in 0..net.params.len() {
            let mut p = net.clone();
            p.params[i] += h;
            let up = p.loss(&x, &null, &t);
            p.params[i] -= 2.0 * h;
            let down = p.loss(&x, &null, &t);
            let num = (up - down) / (2.0 * h);
            assert!((num - g[i]).abs() <= 1e-4 * num.abs().max(g[i].abs()).max(1e-3), "{i}: {num} vs {}", g[i]);
        }
    }

    fn one_sample_dataset() -> Dataset {
        let pts: Vec<Vec3> = (0..8).map(|k| Vec3::new(0.5 * k as f64, 0.1 * (k as f64).powi(2) / 8.0, 0.0)).collect();
        Dataset {
            kind: RepresentationKind::BSpline,
            beams: 4,
            samples: vec![DemoSample {
                context: ctx(4),
                anchors: AnchorSet::new(pts).unwrap(),
                frame: Pose2::new(Vec2::zeros(), 0.0),
            }],
            samples_per_episode: 1,
            episodes: Vec::new(),
        }
    }

    #[test]
    fn sampling_properties() {
        let ds = one_sample_dataset();
        let cfg = DiffusionConfig { hidden: 32, max_steps: 20, batch: 8, ..Default::default() };
        let (policy, _) = train(&ds, &cfg).unwrap();
        let c = ctx(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = DMatrix::from_fn(4, LATENT_DIM, |_, _| rng.sample(StandardNormal));
        let a = policy.denoise_from(&init, 10, &c).unwrap();
        assert_eq!(a, policy.denoise_from(&init, 10, &c).unwrap());
        assert_eq!(a.reverse_steps, 10);
        let anc = policy.sample(&c, 16, &mut rng, SamplerMode::Ancestral).unwrap();
        assert_eq!(anc.candidates.len(), 16);
        for (i, p) in anc.candidates.iter().enumerate() {
            assert_eq!(p.points[0], Vec3::zeros());
            for q in &anc.candidates[i + 1..] {
                assert!(p != q);
            }
        }
        let warm = policy
            .warm_start_sample(&ds.samples[0].anchors.as_control_points(), &c, 3, 6, &mut rng, SamplerMode::Ancestral)
            .unwrap();
        assert_eq!(warm.reverse_steps, 6);
        assert!(policy.warm_start_sample(&anc.candidates[0], &c, 1, 11, &mut rng, SamplerMode::Ancestral).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ds = one_sample_dataset();
        let cfg = DiffusionConfig { hidden: 16, max_steps: 5, batch: 4, ..Default::default() };
        let (mut policy, _) = train(&ds, &cfg).unwrap();
        policy.config_hash = "abc".into();
        let mut buf = Vec::new();
        policy.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDPC");
        assert_eq!(DiffusionPolicy::read_checkpoint(buf.as_slice()).unwrap(), policy);
        buf[0] = b'X';
        assert!(DiffusionPolicy::read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = one_sample_dataset();
        let cfg = DiffusionConfig { hidden: 16, max_steps: 30, batch: 4, ..Default::default() };
        let (a, la) = train(&ds, &cfg).unwrap();
        let (b, lb) = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.final_loss < la.initial_loss);
    }
}
