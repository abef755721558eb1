//! Gauss rules, quadtree cut-cell rules and arc rules.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{
    box_polygon, classify_box_all, inv, point_in_polygon, ElementClass, GeometryMap, Point, TrimCurve,
};

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one Gauss point");
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.5;
    }
    (x, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Full,
    Cut,
    BoundaryFace,
    TrimArc,
    SigmaArc,
}

/// Volume rules carry parametric nodes and parametric weights; arc rules
/// carry physical nodes and arclength weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
}

impl QuadratureRule {
    pub fn empty(kind: RuleKind) -> Self {
        Self { nodes: Vec::new(), weights: Vec::new(), kind }
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn push_gauss(&mut self, lo: Point, hi: Point, q: usize, scale: f64) {
        let (x, w) = gauss_legendre(q);
        let (dx, dy) = (hi[0] - lo[0], hi[1] - lo[1]);
        for (yj, wj) in x.iter().zip(&w) {
            for (xi, wi) in x.iter().zip(&w) {
                self.nodes.push([lo[0] + dx * xi, lo[1] + dy * yj]);
                self.weights.push(wi * wj * dx * dy * scale);
            }
        }
    }
}

pub fn gauss_rule(lo: Point, hi: Point, q: usize) -> QuadratureRule {
    let mut r = QuadratureRule::empty(RuleKind::Full);
    r.push_gauss(lo, hi, q.max(1), 1.0);
    r
}

/// Quadtree rule over the kept part of a parametric box. Leaves that still
/// straddle a trim at depth `depth` carry the Gauss rule scaled by their
/// kept fraction, estimated on a 5×5 sub-grid from the linearised level set.
pub fn cut_cell_rule(
    map: &GeometryMap,
    lo: Point,
    hi: Point,
    trims: &[TrimCurve],
    depth: usize,
    q: usize,
) -> Result<QuadratureRule> {
    if depth < 1 {
        return Err(Error::Argument("cut-cell depth must be at least 1".into()));
    }
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let mut rule = QuadratureRule::empty(RuleKind::Cut);
    subdivide(map, lo, hi, trims, depth, q, &mut rule);
    let kept = rule.measure();
    if area - kept < 1e-12 * area {
        return Ok(gauss_rule(lo, hi, q));
    }
    if kept < 1e-12 * area {
        return Ok(QuadratureRule::empty(RuleKind::Cut));
    }
    Ok(rule)
}

fn subdivide(
    map: &GeometryMap,
    lo: Point,
    hi: Point,
    trims: &[TrimCurve],
    depth: usize,
    q: usize,
    rule: &mut QuadratureRule,
) {
    match classify_box_all(map, lo, hi, trims) {
        ElementClass::Exterior => {}
        ElementClass::Interior => rule.push_gauss(lo, hi, q, 1.0),
        ElementClass::Cut if depth == 0 => {
            let f = kept_fraction(map, lo, hi, trims);
            if f > 0.0 {
                rule.push_gauss(lo, hi, q, f);
            }
        }
        ElementClass::Cut => {
            let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
            for (a, b) in [(lo, mid), ([mid[0], lo[1]], [hi[0], mid[1]]), ([lo[0], mid[1]], [mid[0], hi[1]]), (mid, hi)]
            {
                subdivide(map, a, b, trims, depth - 1, q, rule);
            }
        }
    }
}

fn kept_fraction(map: &GeometryMap, lo: Point, hi: Point, trims: &[TrimCurve]) -> f64 {
    const S: usize = 5;
    let sx = (hi[0] - lo[0]) / S as f64;
    let sy = (hi[1] - lo[1]) / S as f64;
    let mut total = 0.0;
    for b in 0..S {
        for a in 0..S {
            let xi = [lo[0] + (a as f64 + 0.5) * sx, lo[1] + (b as f64 + 0.5) * sy];
            let x = map.map(xi);
            let j = map.jacobian(xi);
            let mut frac = 1.0;
            for t in trims {
                let phi = t.level_set(x);
                let g = t.level_set_grad(x);
                // parametric gradient Jᵀ ∇φ
                let gx = j[0][0] * g[0] + j[1][0] * g[1];
                let gy = j[0][1] * g[0] + j[1][1] * g[1];
                let spread = sx * gx.abs() + sy * gy.abs();
                let f = if spread > 0.0 {
                    (0.5 + phi / spread).clamp(0.0, 1.0)
                } else if phi > 0.0 {
                    1.0
                } else {
                    0.0
                };
                frac *= f;
            }
            total += frac;
        }
    }
    total / (S * S) as f64
}

/// Gauss rule on a circular arc, physical nodes with arclength weights.
pub fn arc_rule(center: Point, radius: f64, theta0: f64, theta1: f64, q: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre(q.max(1));
    let dth = theta1 - theta0;
    let mut r = QuadratureRule::empty(RuleKind::TrimArc);
    for (xi, wi) in x.iter().zip(&w) {
        let th = theta0 + dth * xi;
        r.nodes.push([center[0] + radius * th.cos(), center[1] + radius * th.sin()]);
        r.weights.push(wi * radius * dth.abs());
    }
    r
}

/// Gauss rule on a straight segment.
pub fn segment_rule(a: Point, b: Point, q: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre(q.max(1));
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let mut r = QuadratureRule::empty(RuleKind::BoundaryFace);
    for (xi, wi) in x.iter().zip(&w) {
        r.nodes.push([a[0] + xi * (b[0] - a[0]), a[1] + xi * (b[1] - a[1])]);
        r.weights.push(wi * len);
    }
    r
}

/// Angular intervals of the circle `center, radius` restricted to
/// `[theta0, theta1]` whose points lie in the image of the parametric box.
/// Straight-sided images use exact circle–segment intersections.
pub fn trim_arc_in_element(
    map: &GeometryMap,
    lo: Point,
    hi: Point,
    center: Point,
    radius: f64,
    theta0: f64,
    theta1: f64,
) -> Vec<(f64, f64)> {
    let poly = box_polygon(map, lo, hi);
    let mut cuts = vec![theta0, theta1];
    if map.is_polygonal() {
        for i in 0..poly.len() {
            for th in circle_segment_angles(center, radius, poly[i], poly[(i + 1) % poly.len()]) {
                cuts.extend(wrap_into(th, theta0, theta1));
            }
        }
    } else {
        // bracket crossings of the exact inverse-map membership test
        let n = 720;
        let inside = |th: f64| {
            let x = [center[0] + radius * th.cos(), center[1] + radius * th.sin()];
            in_box(map, lo, hi, x)
        };
        let mut prev_th = theta0;
        let mut prev = inside(prev_th);
        for k in 1..=n {
            let th = theta0 + (theta1 - theta0) * k as f64 / n as f64;
            let cur = inside(th);
            if cur != prev {
                let (mut a, mut b) = (prev_th, th);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if inside(m) == prev {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                cuts.push(0.5 * (a + b));
            }
            prev = cur;
            prev_th = th;
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    // the inverse of a curved map decides membership to ~1e-10, so shorter
    // pieces there are artefacts of a seam
    let min_len = if map.is_polygonal() { 1e-13 } else { 1e-8 };
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < min_len {
            continue;
        }
        let m = 0.5 * (a + b);
        let x = [center[0] + radius * m.cos(), center[1] + radius * m.sin()];
        let inside = if map.is_polygonal() { point_in_polygon(x, &poly) } else { in_box(map, lo, hi, x) };
        if inside {
            match out.last_mut() {
                Some(last) if (last.1 - a).abs() < 1e-14 => last.1 = b,
                _ => out.push((a, b)),
            }
        }
    }
    out
}

fn in_box(map: &GeometryMap, lo: Point, hi: Point, x: Point) -> bool {
    match map.inverse(x) {
        Some(p) => p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1],
        None => false,
    }
}

fn circle_segment_angles(c: Point, r: f64, a: Point, b: Point) -> Vec<f64> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let f = [a[0] - c[0], a[1] - c[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
    let qc = f[0] * f[0] + f[1] * f[1] - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if qa == 0.0 || disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let mut out = Vec::new();
    for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
        if (-1e-14..=1.0 + 1e-14).contains(&t) {
            let p = [a[0] + t * d[0] - c[0], a[1] + t * d[1] - c[1]];
            out.push(p[1].atan2(p[0]));
        }
    }
    out
}

fn wrap_into(th: f64, a: f64, b: f64) -> Option<f64> {
    let mut t = th;
    while t < a - 1e-14 {
        t += 2.0 * PI;
    }
    while t > b + 1e-14 {
        t -= 2.0 * PI;
    }
    (t >= a - 1e-14 && t <= b + 1e-14).then_some(t.clamp(a, b))
}

/// Physical-space measure of a volume rule, `Σ w |det J|`.
pub fn physical_measure(map: &GeometryMap, rule: &QuadratureRule) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * crate::geometry::det(map.jacobian(*x)).abs()).sum()
}

/// Parametric gradient to physical gradient, `J⁻ᵀ ∇̂`.
pub fn push_gradient(jinv: [[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    [jinv[0][0] * g[0] + jinv[1][0] * g[1], jinv[0][1] * g[0] + jinv[1][1] * g[1]]
}

pub fn jacobian_inverse(map: &GeometryMap, x: Point) -> [[f64; 2]; 2] {
    inv(map.jacobian(x))
}
