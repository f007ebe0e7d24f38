//! Clamped uniform B-splines.
//!
//! Curves are parameterized over the normalized domain `[0, 1]`: the first
//! and last `p + 1` knots repeat, the interior knots are uniformly spaced.
//! Basis functions are computed with the Cox-de Boor triangular scheme,
//! which yields the `p + 1` non-zero functions of a knot span in `O(p^2)`.
//!
//! Besides evaluation this module carries the analysis used elsewhere:
//! least-squares fitting with pinned endpoints, arc-length discretization,
//! the per-control-point support interval and the control-point deviation
//! bound.

use crate::geom::Vec3;
use crate::trajectory::{arclength_discretize, Trajectory};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("invalid dimensions: degree {degree} needs at least {} control points, got {control_count}", degree + 1)]
    InvalidDimension { degree: usize, control_count: usize },
    #[error("parameter {0} outside the spline domain [0, 1]")]
    Domain(f64),
    #[error("control point index {index} out of range for {count} points")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("control point count {got} does not match the spline ({expected})")]
    SpecMismatch { expected: usize, got: usize },
    #[error("derivative order {0} not supported (use 1 or 2)")]
    UnsupportedOrder(usize),
    #[error("{samples} samples cannot determine {control_count} control points")]
    Underdetermined { samples: usize, control_count: usize },
    #[error("normal equations are ill-conditioned")]
    IllConditioned,
    #[error("at least {min} samples required, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("malformed control point data: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, SplineError>;

/// Non-decreasing knot sequence `u_0 ..= u_{N+p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector(pub Vec<f64>);

impl KnotVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for KnotVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Clamped knots on `[0, 1]` with `N - p` uniform interior spans.
pub fn make_clamped_uniform_knots(degree: usize, control_count: usize) -> Result<KnotVector> {
    if degree < 1 || control_count < degree + 1 {
        return Err(SplineError::InvalidDimension { degree, control_count });
    }
    let spans = control_count - degree;
    let mut knots = Vec::with_capacity(control_count + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for i in 1..spans {
        knots.push(i as f64 / spans as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    Ok(KnotVector(knots))
}

/// Degree, control-point count and the clamped knot vector they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub control_count: usize,
    pub knots: KnotVector,
}

impl SplineSpec {
    pub fn new(degree: usize, control_count: usize) -> Result<Self> {
        let knots = make_clamped_uniform_knots(degree, control_count)?;
        Ok(Self { degree, control_count, knots })
    }

    /// The planner's curve: cubic with eight control points.
    pub fn cubic8() -> Self {
        Self::new(3, 8).expect("valid dimensions")
    }

    /// Parameter domain `[u_p, u_N]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.control_count])
    }

    fn check_domain(&self, u: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&u) {
            return Err(SplineError::Domain(u));
        }
        Ok(())
    }

    /// Index `k` of the span `[u_k, u_{k+1})` containing `u`; the right end
    /// of the domain belongs to the last non-empty span.
    pub fn find_span(&self, u: f64) -> usize {
        find_span(self.degree, self.control_count, self.knots.as_slice(), u)
    }

    /// Basis value `B_{i,p}(u)`.
    pub fn basis(&self, i: usize, u: f64) -> Result<f64> {
        if i >= self.control_count {
            return Err(SplineError::IndexOutOfRange { index: i, count: self.control_count });
        }
        self.check_domain(u)?;
        let span = self.find_span(u);
        let vals = basis_funs(self.degree, self.knots.as_slice(), span, u);
        let first = span - self.degree;
        Ok(if (first..=span).contains(&i) { vals[i - first] } else { 0.0 })
    }

    /// All `N` basis values at `u`.
    pub fn basis_all(&self, u: f64) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        let span = self.find_span(u);
        let vals = basis_funs(self.degree, self.knots.as_slice(), span, u);
        let mut out = vec![0.0; self.control_count];
        out[span - self.degree..=span].copy_from_slice(&vals);
        Ok(out)
    }

    fn check_cps(&self, cps: &ControlPointSet) -> Result<()> {
        if cps.len() != self.control_count {
            return Err(SplineError::SpecMismatch { expected: self.control_count, got: cps.len() });
        }
        Ok(())
    }

    /// Curve point `sum_i B_{i,p}(u) Q_i`.
    pub fn evaluate(&self, cps: &ControlPointSet, u: f64) -> Result<Vec3> {
        self.check_cps(cps)?;
        self.check_domain(u)?;
        Ok(eval_curve(self.degree, self.knots.as_slice(), &cps.points, u))
    }

    /// Analytic derivative of order 1 or 2.
    pub fn derivative(&self, cps: &ControlPointSet, u: f64, order: usize) -> Result<Vec3> {
        if !(1..=2).contains(&order) {
            return Err(SplineError::UnsupportedOrder(order));
        }
        self.check_cps(cps)?;
        self.check_domain(u)?;
        if order > self.degree {
            return Ok(Vec3::zeros());
        }
        let mut degree = self.degree;
        let mut knots = self.knots.0.clone();
        let mut pts = cps.points.clone();
        for _ in 0..order {
            let (k, p) = derivative_points(degree, &knots, &pts);
            knots = k;
            pts = p;
            degree -= 1;
        }
        Ok(eval_curve(degree, &knots, &pts, u))
    }

    /// `[u_i, u_{i+p+1}]` clipped to the domain: moving `Q_i` alone changes
    /// the curve only inside this interval.
    pub fn local_support_range(&self, i: usize) -> Result<(f64, f64)> {
        if i >= self.control_count {
            return Err(SplineError::IndexOutOfRange { index: i, count: self.control_count });
        }
        let (lo, hi) = self.domain();
        Ok((self.knots[i].max(lo), self.knots[i + self.degree + 1].min(hi)))
    }

    /// Number of dense samples used for arc-length estimation.
    pub fn dense_count(&self) -> usize {
        200 * (self.control_count - self.degree)
    }

    /// `M` samples equally spaced in arc length, from `u_p` to `u_N`.
    ///
    /// A curve shorter than 1e-9 m yields `M` copies of `Q_0` flagged
    /// degenerate.
    pub fn discretize_arclength(&self, cps: &ControlPointSet, m: usize) -> Result<Trajectory> {
        self.check_cps(cps)?;
        if m < 2 {
            return Err(SplineError::TooFewSamples { min: 2, got: m });
        }
        let (lo, hi) = self.domain();
        let knots = self.knots.as_slice();
        let curve = |u: f64| eval_curve(self.degree, knots, &cps.points, u);
        Ok(arclength_discretize(curve, lo, hi, self.dense_count(), m)
            .unwrap_or_else(|| Trajectory::stationary(cps.points[0], m)))
    }

    /// Least-squares fit with chord-length parameterization and the
    /// endpoints pinned to the first and last sample.
    pub fn fit_least_squares(&self, samples: &[Vec3]) -> Result<FitResult> {
        let params = chord_length_params(samples);
        self.fit_with_params(samples, &params)
    }

    /// Least-squares fit at caller-supplied parameters (clamped to the domain).
    pub fn fit_with_params(&self, samples: &[Vec3], params: &[f64]) -> Result<FitResult> {
        let n = self.control_count;
        if samples.len() < n {
            return Err(SplineError::Underdetermined { samples: samples.len(), control_count: n });
        }
        assert_eq!(samples.len(), params.len(), "one parameter per sample");
        let (lo, hi) = self.domain();
        let m = samples.len();
        let first = samples[0];
        let last = samples[m - 1];

        let mut a = DMatrix::<f64>::zeros(m, n);
        for (r, &u) in params.iter().enumerate() {
            let u = u.clamp(lo, hi);
            let span = self.find_span(u);
            let vals = basis_funs(self.degree, self.knots.as_slice(), span, u);
            for (j, v) in vals.iter().enumerate() {
                a[(r, span - self.degree + j)] = *v;
            }
        }

        let mut points = vec![Vec3::zeros(); n];
        points[0] = first;
        points[n - 1] = last;
        let free = n.saturating_sub(2);
        if free > 0 {
            // Move the pinned endpoint columns to the right-hand side.
            let interior = a.columns(1, free).into_owned();
            let mut normal = interior.transpose() * &interior;
            let eig = normal.clone().symmetric_eigen();
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            let cond = if min > 0.0 { max / min } else { f64::INFINITY };
            if cond > 1e10 {
                for d in 0..free {
                    normal[(d, d)] += 1e-8;
                }
            }
            let chol = normal.cholesky().ok_or(SplineError::IllConditioned)?;
            for c in 0..3 {
                let rhs = DVector::from_iterator(
                    m,
                    (0..m).map(|r| samples[r][c] - a[(r, 0)] * first[c] - a[(r, n - 1)] * last[c]),
                );
                let sol = chol.solve(&(interior.transpose() * rhs));
                if sol.iter().any(|v| !v.is_finite()) {
                    return Err(SplineError::IllConditioned);
                }
                for d in 0..free {
                    points[d + 1][c] = sol[d];
                }
            }
        }

        let mut sq = 0.0;
        for r in 0..m {
            let mut p = Vec3::zeros();
            for (j, q) in points.iter().enumerate() {
                p += q * a[(r, j)];
            }
            sq += (p - samples[r]).norm_squared();
        }
        Ok(FitResult { control_points: ControlPointSet::new(points), rms: (sq / m as f64).sqrt() })
    }

    /// Maximum curve deviation over `dense` uniform parameters and maximum
    /// control-point displacement between two control sets.
    pub fn deviation_bound(
        &self,
        clean: &ControlPointSet,
        perturbed: &ControlPointSet,
        dense: usize,
    ) -> Result<Deviation> {
        self.check_cps(clean)?;
        self.check_cps(perturbed)?;
        let dense = dense.max(2);
        let (lo, hi) = self.domain();
        let mut max_path = 0.0f64;
        for k in 0..dense {
            let u = lo + (hi - lo) * k as f64 / (dense - 1) as f64;
            let a = eval_curve(self.degree, self.knots.as_slice(), &clean.points, u);
            let b = eval_curve(self.degree, self.knots.as_slice(), &perturbed.points, u);
            max_path = max_path.max((a - b).norm());
        }
        let max_cp = clean
            .points
            .iter()
            .zip(&perturbed.points)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        Ok(Deviation { max_path_deviation: max_path, max_cp_error: max_cp })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub max_path_deviation: f64,
    pub max_cp_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub control_points: ControlPointSet,
    /// Root-mean-square residual at the sample locations.
    pub rms: f64,
}

/// Normalized cumulative chord length of each sample; falls back to uniform
/// spacing when all samples coincide.
pub fn chord_length_params(samples: &[Vec3]) -> Vec<f64> {
    let m = samples.len();
    let cum = crate::geom::cumulative_lengths(samples);
    let total = cum.last().copied().unwrap_or(0.0);
    if total < 1e-12 {
        return (0..m).map(|i| if m > 1 { i as f64 / (m - 1) as f64 } else { 0.0 }).collect();
    }
    cum.iter().map(|c| c / total).collect()
}

/// Ordered control points `Q_0 .. Q_{N-1}` (meters, robot frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    pub points: Vec<Vec3>,
}

impl ControlPointSet {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(SplineError::Malformed(format!("{} values is not a multiple of 3", flat.len())));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(SplineError::Malformed("non-finite coordinate".into()));
        }
        Ok(Self::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()))
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 24 != 0 {
            return Err(SplineError::Malformed(format!("{} bytes is not a multiple of 24", bytes.len())));
        }
        let flat: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_flat(&flat)
    }

    /// Whitespace-separated decimals, one point per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let flat = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| SplineError::Malformed(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(&flat)
    }
}

pub(crate) fn find_span(degree: usize, control_count: usize, knots: &[f64], u: f64) -> usize {
    if u >= knots[control_count] {
        // Right end: last span with non-zero length.
        let mut k = control_count - 1;
        while k > degree && knots[k] >= knots[k + 1] {
            k -= 1;
        }
        return k;
    }
    if u <= knots[degree] {
        let mut k = degree;
        while k + 1 < control_count && knots[k + 1] <= u {
            k += 1;
        }
        return k;
    }
    let (mut lo, mut hi) = (degree, control_count);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Non-zero basis functions `B_{span-p..=span, p}(u)`.
pub(crate) fn basis_funs(degree: usize, knots: &[f64], span: usize, u: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom.abs() < 1e-300 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

fn eval_curve(degree: usize, knots: &[f64], points: &[Vec3], u: f64) -> Vec3 {
    if degree == 0 {
        let span = find_span(0, points.len(), knots, u);
        return points[span];
    }
    let span = find_span(degree, points.len(), knots, u);
    let vals = basis_funs(degree, knots, span, u);
    let mut p = Vec3::zeros();
    for (j, v) in vals.iter().enumerate() {
        p += points[span - degree + j] * *v;
    }
    p
}

/// Control points and knots of the first derivative curve (degree p-1).
fn derivative_points(degree: usize, knots: &[f64], points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
    let p = degree as f64;
    let pts = (0..points.len() - 1)
        .map(|i| {
            let du = knots[i + degree + 1] - knots[i + 1];
            if du > 0.0 {
                (points[i + 1] - points[i]) * (p / du)
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    (knots[1..knots.len() - 1].to_vec(), pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive definition, independent of the triangular scheme.
    /// Uses the half-open convention plus the right-end closure.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, u: f64, n: usize) -> f64 {
        if p == 0 {
            let last = knots[n];
            let inside = knots[i] <= u && u < knots[i + 1];
            let right_end = u == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if inside || right_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (u - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, u, n);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - u) / d2 * cox_de_boor(knots, i + 1, p - 1, u, n);
        }
        v
    }

    fn random_cps(rng: &mut impl Rng, n: usize) -> ControlPointSet {
        ControlPointSet::new(
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0))
                .collect(),
        )
    }

    #[test]
    fn knot_examples() {
        assert_eq!(make_clamped_uniform_knots(3, 4).unwrap().0, vec![0., 0., 0., 0., 1., 1., 1., 1.]);
        assert_eq!(
            make_clamped_uniform_knots(3, 8).unwrap().0,
            vec![0., 0., 0., 0., 0.2, 0.4, 0.6, 0.8, 1., 1., 1., 1.]
        );
        assert!(matches!(make_clamped_uniform_knots(3, 3), Err(SplineError::InvalidDimension { .. })));
    }

    #[test]
    fn basis_matches_recursive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(p, n) in &[(1, 2), (2, 5), (3, 4), (3, 8), (4, 9)] {
            let spec = SplineSpec::new(p, n).unwrap();
            for _ in 0..200 {
                let u: f64 = rng.random_range(0.0..=1.0);
                for i in 0..n {
                    let a = spec.basis(i, u).unwrap();
                    let b = cox_de_boor(spec.knots.as_slice(), i, p, u, n);
                    assert!((a - b).abs() < 1e-12, "p={p} n={n} i={i} u={u}: {a} vs {b}");
                }
            }
            for u in [0.0, 1.0] {
                for i in 0..n {
                    let b = cox_de_boor(spec.knots.as_slice(), i, p, u, n);
                    assert!((spec.basis(i, u).unwrap() - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn basis_examples() {
        let spec = SplineSpec::cubic8();
        assert_eq!(spec.basis(0, 0.0).unwrap(), 1.0);
        assert_eq!(spec.basis(7, 1.0).unwrap(), 1.0);
        // Interior knot 0.4 sits at the start of span 5: active B_2..B_5.
        let vals: Vec<f64> = (2..=5).map(|i| spec.basis(i, 0.4).unwrap()).collect();
        let expect = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 0.0];
        for (v, e) in vals.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12, "{vals:?}");
        }
        assert!(matches!(spec.basis(0, 1.5), Err(SplineError::Domain(_))));
        assert!(matches!(spec.basis(8, 0.5), Err(SplineError::IndexOutOfRange { .. })));
    }

    #[test]
    fn evaluate_examples() {
        let spec = SplineSpec::cubic8();
        let constant = ControlPointSet::new(vec![Vec3::new(1.0, 2.0, 0.0); 8]);
        for u in [0.0, 0.13, 0.5, 1.0] {
            assert!((spec.evaluate(&constant, u).unwrap() - Vec3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
        }
        let line = ControlPointSet::new((0..8).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        let p = spec.evaluate(&line, 0.5).unwrap();
        assert!(p.y.abs() < 1e-15 && (0.0..=7.0).contains(&p.x));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cps = random_cps(&mut rng, 8);
        assert_eq!(spec.evaluate(&cps, 0.0).unwrap(), cps.points[0]);
        assert_eq!(spec.evaluate(&cps, 1.0).unwrap(), cps.points[7]);
    }

    #[test]
    fn derivative_examples() {
        let spec = SplineSpec::cubic8();
        let mut pts = vec![Vec3::zeros(); 8];
        pts[1] = Vec3::new(1.0, 0.0, 0.0);
        for (i, p) in pts.iter_mut().enumerate().skip(2) {
            *p = Vec3::new(i as f64, 0.5 * i as f64, 0.0);
        }
        let cps = ControlPointSet::new(pts);
        let d = spec.derivative(&cps, 0.0, 1).unwrap();
        assert!((d.normalize() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        // Clamped start: tangent = p / u_{p+1} * (Q1 - Q0) = 3 / 0.2.
        assert!((d.x - 15.0).abs() < 1e-12);

        let constant = ControlPointSet::new(vec![Vec3::new(0.3, -1.0, 0.0); 8]);
        for u in [0.0, 0.3, 0.9] {
            assert!(spec.derivative(&constant, u, 1).unwrap().norm() < 1e-12);
            assert!(spec.derivative(&constant, u, 2).unwrap().norm() < 1e-12);
        }
        assert!(matches!(spec.derivative(&cps, 0.5, 3), Err(SplineError::UnsupportedOrder(3))));
    }

    #[test]
    fn second_derivative_continuous_at_knot() {
        let spec = SplineSpec::cubic8();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cps = random_cps(&mut rng, 8);
        let h = 1e-12;
        let left = spec.derivative(&cps, 0.4 - h, 2).unwrap();
        let right = spec.derivative(&cps, 0.4 + h, 2).unwrap();
        assert!((left - right).norm() < 1e-6 * (1.0 + left.norm()), "{left} {right}");
        // The third derivative jumps, so C2 is the most that holds.
        let l3 = (spec.derivative(&cps, 0.4 - 1e-6, 2).unwrap() - left) / -1e-6;
        let r3 = (spec.derivative(&cps, 0.4 + 1e-6, 2).unwrap() - right) / 1e-6;
        assert!((l3 - r3).norm() > 1e-3);
    }

    #[test]
    fn fit_examples() {
        let spec = SplineSpec::cubic8();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_cps(&mut rng, 8);
        let params: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
        let samples: Vec<Vec3> = params.iter().map(|&u| spec.evaluate(&truth, u).unwrap()).collect();
        let fit = spec.fit_with_params(&samples, &params).unwrap();
        for (a, b) in fit.control_points.points.iter().zip(&truth.points) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(fit.rms < 1e-9);

        let same = vec![Vec3::new(0.5, 0.5, 0.0); 20];
        let fit = spec.fit_least_squares(&same).unwrap();
        for q in &fit.control_points.points {
            assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-9);
        }

        assert!(matches!(
            spec.fit_least_squares(&same[..3]),
            Err(SplineError::Underdetermined { samples: 3, control_count: 8 })
        ));
    }

    #[test]
    fn fit_pins_endpoints() {
        let spec = SplineSpec::cubic8();
        let samples: Vec<Vec3> =
            (0..40).map(|k| Vec3::new(k as f64 * 0.1, (k as f64 * 0.2).sin(), 0.0)).collect();
        let fit = spec.fit_least_squares(&samples).unwrap();
        assert_eq!(fit.control_points.points[0], samples[0]);
        assert_eq!(fit.control_points.points[7], samples[39]);
    }

    #[test]
    fn discretize_examples() {
        let spec = SplineSpec::cubic8();
        let line = ControlPointSet::new((0..8).map(|i| Vec3::new(6.0 * i as f64 / 7.0, 0.0, 0.0)).collect());
        let traj = spec.discretize_arclength(&line, 31).unwrap();
        assert!((traj.total_length() - 6.0).abs() < 1e-9);
        for w in traj.points.windows(2) {
            let d = (w[1] - w[0]).norm();
            assert!((d - 0.2).abs() <= 0.02, "{d}");
        }
        let two = spec.discretize_arclength(&line, 2).unwrap();
        assert_eq!(two.points, vec![line.points[0], line.points[7]]);
        let constant = ControlPointSet::new(vec![Vec3::new(1.0, 1.0, 0.0); 8]);
        let t = spec.discretize_arclength(&constant, 5).unwrap();
        assert!(t.degenerate && t.points.iter().all(|p| *p == constant.points[0]));
        assert!(spec.discretize_arclength(&line, 1).is_err());
    }

    #[test]
    fn support_ranges() {
        let spec = SplineSpec::cubic8();
        assert_eq!(spec.local_support_range(7).unwrap(), (0.8, 1.0));
        assert_eq!(spec.local_support_range(0).unwrap(), (0.0, 0.2));
        assert_eq!(spec.local_support_range(4).unwrap(), (0.2, 1.0));
        assert!(spec.local_support_range(8).is_err());
    }

    #[test]
    fn deviation_examples() {
        let spec = SplineSpec::cubic8();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = random_cps(&mut rng, 8);
        let d = spec.deviation_bound(&clean, &clean, 500).unwrap();
        assert_eq!((d.max_path_deviation, d.max_cp_error), (0.0, 0.0));

        let mut moved = clean.clone();
        moved.points[7].x += 0.5;
        let d = spec.deviation_bound(&clean, &moved, 2000).unwrap();
        assert!((d.max_cp_error - 0.5).abs() < 1e-15);
        assert!(d.max_path_deviation <= 0.5 + 1e-12);

        let short = ControlPointSet::new(clean.points[..7].to_vec());
        assert!(matches!(spec.deviation_bound(&clean, &short, 10), Err(SplineError::SpecMismatch { .. })));
    }

    #[test]
    fn serialization_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cps = random_cps(&mut rng, 8);
        let bytes = cps.to_le_bytes();
        assert_eq!(bytes.len(), 8 * 3 * 8);
        assert_eq!(&bytes[..8], &cps.points[0].x.to_le_bytes());
        assert_eq!(ControlPointSet::from_le_bytes(&bytes).unwrap(), cps);
        assert_eq!(ControlPointSet::from_text(&cps.to_text()).unwrap(), cps);
        assert!(ControlPointSet::from_text("1 2").is_err());
    }
}
