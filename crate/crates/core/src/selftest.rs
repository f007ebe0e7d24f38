//! Fast runtime checks of the numerical building blocks against
//! independent reference computations. Used by `dsnav selftest`.

use crate::critic::{safety_cost_from_clearance, score, CriticConfig};
use crate::diffusion::{make_schedule, ScheduleKind};
use crate::esdf::{build_esdf, SignedDistance};
use crate::geom::{lift, Vec2, Vec3};
use crate::repr::{decode_interpolating_cubic, AnchorSet};
use crate::spline::{ControlPointSet, SplineSpec};
use crate::trajectory::Trajectory;
use crate::world::{generate_world, OccupancyGrid, WorldParams};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Cox-de Boor recursion, written out directly.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, u: f64) -> f64 {
    if p == 0 {
        let last = u >= knots[knots.len() - 1] && knots[i + 1] == knots[knots.len() - 1] && knots[i] < knots[i + 1];
        return if (knots[i] <= u && u < knots[i + 1]) || last { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (u - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, u);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - u) / d2 * cox_de_boor(knots, i + 1, p - 1, u);
    }
    v
}

fn spline_checks(out: &mut Vec<Check>) {
    let spec = SplineSpec::cubic8();
    let knots = spec.knots.as_slice().to_vec();
    let mut worst_pu: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for k in 0..=200 {
        let u = k as f64 / 200.0;
        let b = spec.basis_all(u).expect("u in domain");
        worst_pu = worst_pu.max((b.iter().sum::<f64>() - 1.0).abs());
        for (i, bi) in b.iter().enumerate() {
            worst_ref = worst_ref.max((bi - cox_de_boor(&knots, i, spec.degree, u)).abs());
        }
    }
    out.push(check("spline.partition_of_unity", worst_pu < 1e-12, format!("max |sum-1| = {worst_pu:.2e}")));
    out.push(check("spline.basis_vs_recursion", worst_ref < 1e-12, format!("max diff = {worst_ref:.2e}")));

    let cps = ControlPointSet::new((0..8).map(|i| Vec3::new(i as f64, (i as f64 * 0.7).sin(), 0.0)).collect());
    let ends = spec.evaluate(&cps, 0.0).and_then(|a| spec.evaluate(&cps, 1.0).map(|b| (a, b)));
    let ok = matches!(ends, Ok((a, b)) if (a - cps.points[0]).norm() < 1e-12 && (b - cps.points[7]).norm() < 1e-12);
    out.push(check("spline.endpoint_interpolation", ok, "C(0)=Q0, C(1)=Q7".into()));

    // Moving Q7 leaves the first three spans untouched.
    let mut moved = cps.clone();
    moved.points[7] += Vec3::new(0.0, 1.0, 0.0);
    let lo = spec.local_support_range(7).map(|r| r.0).unwrap_or(0.0);
    let mut worst: f64 = 0.0;
    for k in 0..=100 {
        let u = lo * k as f64 / 100.0;
        let a = spec.evaluate(&cps, u).expect("domain");
        let b = spec.evaluate(&moved, u).expect("domain");
        worst = worst.max((a - b).norm());
    }
    out.push(check("spline.local_support", worst < 1e-12, format!("max change before u={lo} is {worst:.2e}")));

    // The interpolating cubic, by contrast, passes through its nodes.
    let anchors = AnchorSet::new(cps.points.clone()).expect("eight anchors");
    let worst = match decode_interpolating_cubic(&anchors, 2001) {
        Ok(t) => cps
            .points
            .iter()
            .map(|q| t.points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    out.push(check("cubic.passes_through_nodes", worst < 0.01, format!("max node miss = {worst:.2e}")));
}

fn esdf_checks(out: &mut Vec<Check>) {
    let params = WorldParams { density: 0.1, ..Default::default() };
    let world = match generate_world(5, &params) {
        Ok(w) => w,
        Err(e) => {
            out.push(check("esdf.vs_brute_force", false, e.to_string()));
            return;
        }
    };
    let g = &world.grid;
    let field = build_esdf(g).expect("non-empty grid");
    let occ: Vec<(i64, i64)> = (0..g.height as i64)
        .flat_map(|y| (0..g.width as i64).map(move |x| (x, y)))
        .filter(|(x, y)| g.occupied(*x, *y))
        .collect();
    let mut worst: f64 = 0.0;
    for iy in (0..g.height).step_by(7) {
        for ix in (0..g.width).step_by(7) {
            if g.occupied(ix as i64, iy as i64) {
                continue;
            }
            let d = occ
                .iter()
                .map(|(x, y)| (((x - ix as i64).pow(2) + (y - iy as i64).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
                * g.resolution;
            worst = worst.max((field.value(ix, iy) - d).abs());
        }
    }
    out.push(check("esdf.vs_brute_force", worst < 1e-9, format!("max error = {worst:.2e} m")));
    let step = field.max_neighbor_step();
    out.push(check(
        "esdf.lipschitz",
        step <= g.resolution + 1e-9,
        format!("max neighbor step {step:.4} m (cell {:.2} m)", g.resolution),
    ));
    let mut room = OccupancyGrid::walled_room(4.0, 0.05);
    room.fill_rect(Vec2::new(1.9, 1.9), Vec2::new(2.1, 2.1), true);
    let f = build_esdf(&room).expect("non-empty grid");
    let inside = f.distance(Vec2::new(2.0, 2.0));
    out.push(check("esdf.sign", inside <= 0.0 && f.distance(Vec2::new(1.0, 1.0)) > 0.5, format!("center of block reads {inside:.3}")));
}

fn critic_checks(out: &mut Vec<Check>) {
    let c = safety_cost_from_clearance(&[1.0, 1.0, 1.0, 0.1], 0.9, 0.3);
    let expect = 0.729 * 0.2 / (1.0 + 0.9 + 0.81 + 0.729);
    out.push(check("critic.hinge_hand_value", (c - expect).abs() < 1e-12, format!("{c:.6} vs {expect:.6}")));

    struct Far;
    impl SignedDistance for Far {
        fn distance(&self, _p: Vec2) -> f64 {
            5.0
        }
    }
    let t = Trajectory::from_polyline((0..32).map(|k| lift(Vec2::new(0.1 * k as f64, 0.0))).collect());
    let b = score(&Far, &t, Vec2::new(3.1, 0.0), &CriticConfig::default());
    let expect = 3.1;
    out.push(check(
        "critic.free_space_total",
        b.j_safe == 0.0 && (b.j_total - expect).abs() < 1e-9,
        format!("J = {:.6}, expected {expect}", b.j_total),
    ));
}

fn schedule_checks(out: &mut Vec<Check>) {
    let sched = make_schedule(10, ScheduleKind::Cosine).expect("10 steps");
    let mut worst: f64 = 0.0;
    for s in 0..=10 {
        worst = worst.max((sched.alpha(s).powi(2) + sched.sigma(s).powi(2) - 1.0).abs());
    }
    let mono = (1..=10).all(|s| sched.alpha(s) < sched.alpha(s - 1));
    out.push(check("schedule.variance_preserving", worst < 1e-12 && mono, format!("max |a^2+s^2-1| = {worst:.2e}")));
    let x0 = [0.3, -1.2, 0.8];
    let eps = [0.5, 0.1, -0.7];
    let mut err: f64 = 0.0;
    for s in 1..=10 {
        let xs = sched.forward_noise(&x0, s, &eps).expect("step");
        let v = sched.v_target(&x0, &eps, s).expect("step");
        let back = sched.x0_from_v(&xs, &v, s).expect("step");
        err = err.max(back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    out.push(check("schedule.v_roundtrip", err < 1e-12, format!("max x0 error = {err:.2e}")));
}

/// Run every check; never panics on a failed check.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    spline_checks(&mut out);
    esdf_checks(&mut out);
    critic_checks(&mut out);
    schedule_checks(&mut out);
    out
}
