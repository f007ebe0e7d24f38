//! Deterministic SVG rendering: line charts, deviation curves and
//! trajectory overlays on an occupancy grid.

use crate::experiments::{ArmResult, LocalSupportStudy};
use crate::geom::Vec2;
use crate::world::OccupancyGrid;
use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / count.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 { 0.0 } else { t });
        t += step;
    }
    out
}

/// Line chart with markers. `y_range` fixes the vertical axis; `vlines` adds
/// labelled dashed vertical markers.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
    vlines: &[(f64, &str)],
) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 150.0, 40.0, 55.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    for (x, _) in vlines {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if let Some((a, b)) = y_range {
        (y0, y1) = (a, b);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, ml + pw / 2.0, escape(title));
    for t in nice_ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, mt, mt + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, mt + ph + 16.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(s, r##"<line x1="{ml:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, ml + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, ml - 6.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (x, label) in vlines {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#555" stroke-dasharray="5,4"/>"##,
            sx(*x),
            mt,
            mt + ph
        );
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##, sx(*x) + 4.0, mt + 14.0, escape(label));
    }
    for (i, se) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = se.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        if path.len() > 1 {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        }
        if se.points.len() <= 40 {
            for (x, y) in &se.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(*x), sy(*y));
            }
        }
        let ly = mt + 10.0 + 20.0 * i as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&se.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    if (t - t.round()).abs() < 1e-9 {
        format!("{}", t.round() as i64)
    } else {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// SR and SPL against the data fraction.
pub fn scaling_svg(arms: &[ArmResult], fractions: &[f64]) -> String {
    let pct: Vec<f64> = fractions.iter().map(|f| 100.0 * f).collect();
    let sr = arms.iter().zip(&pct).map(|(a, x)| (*x, a.sr)).collect();
    let spl = arms.iter().zip(&pct).map(|(a, x)| (*x, a.spl)).collect();
    line_chart(
        "Navigation performance vs. training data",
        "training episodes used (%)",
        "percent",
        &[Series::new("SR", sr), Series::new("SPL", spl)],
        Some((0.0, 100.0)),
        &[],
    )
}

/// Mean displacement after perturbing the trailing anchors.
pub fn deviation_svg(study: &LocalSupportStudy) -> String {
    line_chart(
        "Displacement after perturbing the last four anchors",
        "arc length s (m)",
        "mean displacement (m)",
        &[Series::new("B-spline", study.bspline.clone()), Series::new("interpolating cubic", study.cubic.clone())],
        None,
        &[(study.span_end, "first knot span")],
    )
}

/// Occupancy grid with the executed path, optional reference path and
/// optional candidate trajectories.
pub fn overlay_svg(
    grid: &OccupancyGrid,
    start: Vec2,
    goal: Vec2,
    executed: &[Vec2],
    reference: Option<&[Vec2]>,
    candidates: &[Vec<Vec2>],
) -> String {
    let px = 4.0;
    let (w, h) = (grid.width as f64 * px, grid.height as f64 * px);
    let origin = grid.origin;
    let res = grid.resolution;
    let tx = |p: Vec2| ((p.x - origin.x) / res * px, h - (p.y - origin.y) / res * px);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    // Occupied cells as horizontal runs.
    for iy in 0..grid.height as i64 {
        let mut ix = 0i64;
        while ix < grid.width as i64 {
            if grid.occupied(ix, iy) {
                let from = ix;
                while ix < grid.width as i64 && grid.occupied(ix, iy) {
                    ix += 1;
                }
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{px}" fill="#444"/>"##,
                    from as f64 * px,
                    h - (iy + 1) as f64 * px,
                    (ix - from) as f64 * px
                );
            } else {
                ix += 1;
            }
        }
    }
    let poly = |pts: &[Vec2]| pts.iter().map(|p| {
        let (x, y) = tx(*p);
        format!("{x:.1},{y:.1}")
    }).collect::<Vec<_>>().join(" ");
    for c in candidates {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#9ecae1" stroke-width="1"/>"##, poly(c));
    }
    if let Some(r) = reference {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#2ca02c" stroke-width="2" stroke-dasharray="6,4"/>"##, poly(r));
    }
    if executed.len() > 1 {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2.5"/>"##, poly(executed));
    }
    for (p, color) in [(start, "#1f77b4"), (goal, "#ff7f0e")] {
        let (x, y) = tx(p);
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="7" fill="{color}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
