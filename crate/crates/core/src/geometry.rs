//! Analytic patch maps, multipatch topology, circular trims and features.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Point = [f64; 2];
/// Scalar data `x ↦ f(x)`.
pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
/// Boundary flux data `(x, n) ↦ g(x, n)` with `n` the outward unit normal.
pub type FluxField = Arc<dyn Fn(Point, Point) -> f64 + Send + Sync>;

pub fn constant(c: f64) -> ScalarField {
    Arc::new(move |_| c)
}

pub fn constant_flux(c: f64) -> FluxField {
    Arc::new(move |_, _| c)
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryMap {
    AffineRect {
        lo: Point,
        hi: Point,
    },
    /// Corners at parametric (0,0), (1,0), (1,1), (0,1).
    BilinearQuad {
        corners: [Point; 4],
    },
    AnnulusSector {
        center: Point,
        r_in: f64,
        r_out: f64,
        theta0: f64,
        theta1: f64,
    },
    /// Linear blend between the segment `a → b` (η = 0) and the arc of
    /// `center, radius` from `theta0` to `theta1` (η = 1).
    DiscCoreBlend {
        a: Point,
        b: Point,
        center: Point,
        radius: f64,
        theta0: f64,
        theta1: f64,
    },
}

impl GeometryMap {
    /// Validates parameters and the sign of the Jacobian on a 17×17 grid.
    pub fn checked(self) -> Result<Self> {
        match &self {
            GeometryMap::AffineRect { lo, hi } => {
                if !(hi[0] > lo[0] && hi[1] > lo[1]) {
                    return Err(Error::Geometry("degenerate rectangle".into()));
                }
            }
            GeometryMap::AnnulusSector { r_in, r_out, theta0, theta1, .. } => {
                if !(*r_in >= 0.0 && r_out > r_in) || theta1 == theta0 {
                    return Err(Error::Geometry("degenerate annulus sector".into()));
                }
            }
            GeometryMap::DiscCoreBlend { radius, theta0, theta1, .. } => {
                if *radius <= 0.0 || theta1 == theta0 {
                    return Err(Error::Geometry("degenerate blend".into()));
                }
            }
            GeometryMap::BilinearQuad { .. } => {}
        }
        let mut sign = 0.0;
        for i in 0..17 {
            for j in 0..17 {
                let d = det(self.jacobian([i as f64 / 16.0, j as f64 / 16.0]));
                if d.abs() < 1e-14 || (sign != 0.0 && d * sign < 0.0) {
                    return Err(Error::Geometry("Jacobian determinant changes sign or vanishes".into()));
                }
                sign = d.signum();
            }
        }
        Ok(self)
    }

    pub fn map(&self, x: Point) -> Point {
        let [s, t] = x;
        match self {
            GeometryMap::AffineRect { lo, hi } => [lo[0] + (hi[0] - lo[0]) * s, lo[1] + (hi[1] - lo[1]) * t],
            GeometryMap::BilinearQuad { corners: c } => {
                let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
                let mut p = [0.0; 2];
                for k in 0..4 {
                    p[0] += w[k] * c[k][0];
                    p[1] += w[k] * c[k][1];
                }
                p
            }
            GeometryMap::AnnulusSector { center, r_in, r_out, theta0, theta1 } => {
                let r = r_in + (r_out - r_in) * t;
                let th = theta0 + (theta1 - theta0) * s;
                [center[0] + r * th.cos(), center[1] + r * th.sin()]
            }
            GeometryMap::DiscCoreBlend { a, b, center, radius, theta0, theta1 } => {
                let th = theta0 + (theta1 - theta0) * s;
                let seg = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let arc = [center[0] + radius * th.cos(), center[1] + radius * th.sin()];
                [(1.0 - t) * seg[0] + t * arc[0], (1.0 - t) * seg[1] + t * arc[1]]
            }
        }
    }

    /// `J[i][j] = ∂x_i/∂ξ_j`.
    pub fn jacobian(&self, x: Point) -> [[f64; 2]; 2] {
        let [s, t] = x;
        match self {
            GeometryMap::AffineRect { lo, hi } => [[hi[0] - lo[0], 0.0], [0.0, hi[1] - lo[1]]],
            GeometryMap::BilinearQuad { corners: c } => {
                let mut j = [[0.0; 2]; 2];
                for i in 0..2 {
                    j[i][0] = (1.0 - t) * (c[1][i] - c[0][i]) + t * (c[2][i] - c[3][i]);
                    j[i][1] = (1.0 - s) * (c[3][i] - c[0][i]) + s * (c[2][i] - c[1][i]);
                }
                j
            }
            GeometryMap::AnnulusSector { r_in, r_out, theta0, theta1, .. } => {
                let dr = r_out - r_in;
                let dth = theta1 - theta0;
                let r = r_in + dr * t;
                let th = theta0 + dth * s;
                [[-r * dth * th.sin(), dr * th.cos()], [r * dth * th.cos(), dr * th.sin()]]
            }
            GeometryMap::DiscCoreBlend { a, b, center, radius, theta0, theta1 } => {
                let dth = theta1 - theta0;
                let th = theta0 + dth * s;
                let seg = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let arc = [center[0] + radius * th.cos(), center[1] + radius * th.sin()];
                let darc = [-radius * dth * th.sin(), radius * dth * th.cos()];
                let mut j = [[0.0; 2]; 2];
                for i in 0..2 {
                    j[i][0] = (1.0 - t) * (b[i] - a[i]) + t * darc[i];
                    j[i][1] = arc[i] - seg[i];
                }
                j
            }
        }
    }

    /// `H[i][j][k] = ∂²x_i/∂ξ_j∂ξ_k`.
    pub fn hessian(&self, x: Point) -> [[[f64; 2]; 2]; 2] {
        let [s, t] = x;
        let mut h = [[[0.0; 2]; 2]; 2];
        match self {
            GeometryMap::AffineRect { .. } => {}
            GeometryMap::BilinearQuad { corners: c } => {
                for i in 0..2 {
                    let m = c[0][i] - c[1][i] + c[2][i] - c[3][i];
                    h[i][0][1] = m;
                    h[i][1][0] = m;
                }
            }
            GeometryMap::AnnulusSector { r_in, r_out, theta0, theta1, .. } => {
                let dr = r_out - r_in;
                let dth = theta1 - theta0;
                let r = r_in + dr * t;
                let th = theta0 + dth * s;
                let (sn, cs) = th.sin_cos();
                h[0][0][0] = -r * dth * dth * cs;
                h[1][0][0] = -r * dth * dth * sn;
                h[0][0][1] = -dr * dth * sn;
                h[1][0][1] = dr * dth * cs;
                h[0][1][0] = h[0][0][1];
                h[1][1][0] = h[1][0][1];
            }
            GeometryMap::DiscCoreBlend { a, b, radius, theta0, theta1, .. } => {
                let dth = theta1 - theta0;
                let th = theta0 + dth * s;
                let (sn, cs) = th.sin_cos();
                let darc = [-radius * dth * sn, radius * dth * cs];
                let ddarc = [-radius * dth * dth * cs, -radius * dth * dth * sn];
                for i in 0..2 {
                    h[i][0][0] = t * ddarc[i];
                    h[i][0][1] = darc[i] - (b[i] - a[i]);
                    h[i][1][0] = h[i][0][1];
                }
            }
        }
        h
    }

    /// Maps whose element images are straight-sided quadrilaterals.
    pub fn is_polygonal(&self) -> bool {
        matches!(self, GeometryMap::AffineRect { .. } | GeometryMap::BilinearQuad { .. })
    }

    /// Parametric preimage of `x`, if it lies in the closed patch.
    pub fn inverse(&self, x: Point) -> Option<Point> {
        let tol = 1e-10;
        let inside = |p: Point| p.iter().all(|v| *v >= -tol && *v <= 1.0 + tol);
        let clamp = |p: Point| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
        match self {
            GeometryMap::AffineRect { lo, hi } => {
                let p = [(x[0] - lo[0]) / (hi[0] - lo[0]), (x[1] - lo[1]) / (hi[1] - lo[1])];
                inside(p).then(|| clamp(p))
            }
            GeometryMap::AnnulusSector { center, r_in, r_out, theta0, theta1 } => {
                let d = sub(x, *center);
                let r = norm(d);
                let mut th = d[1].atan2(d[0]);
                let (lo, hi) = (theta0.min(*theta1), theta0.max(*theta1));
                while th < lo - 1e-12 {
                    th += 2.0 * PI;
                }
                while th > hi + 1e-12 {
                    th -= 2.0 * PI;
                }
                let p = [(th - theta0) / (theta1 - theta0), (r - r_in) / (r_out - r_in)];
                inside(p).then(|| clamp(p))
            }
            _ => {
                for start in [[0.5, 0.5], [0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]] {
                    if let Some(p) = self.newton_inverse(x, start) {
                        if inside(p) {
                            return Some(clamp(p));
                        }
                    }
                }
                None
            }
        }
    }

    fn newton_inverse(&self, x: Point, start: Point) -> Option<Point> {
        let mut p = start;
        for _ in 0..60 {
            let f = sub(self.map(p), x);
            let j = self.jacobian(p);
            let d = det(j);
            let dp = [(j[1][1] * f[0] - j[0][1] * f[1]) / d, (-j[1][0] * f[0] + j[0][0] * f[1]) / d];
            p = [p[0] - dp[0], p[1] - dp[1]];
            if !p[0].is_finite() || p.iter().any(|v| v.abs() > 10.0) {
                return None;
            }
            if norm(dp) < 1e-15 {
                break;
            }
        }
        (dist(self.map(p), x) < 1e-11).then_some(p)
    }
}

pub fn det(j: [[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

pub fn inv(j: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = det(j);
    [[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]]
}

/// Sides: 0 is η = 0, 1 is ξ = 1, 2 is η = 1, 3 is ξ = 0. The side
/// parameter `t` runs along ξ for sides 0 and 2, along η for 1 and 3.
pub fn side_point(side: usize, t: f64) -> Point {
    match side {
        0 => [t, 0.0],
        1 => [1.0, t],
        2 => [t, 1.0],
        _ => [0.0, t],
    }
}

/// Outward unit normal of the patch at a point on `side`, and the
/// arclength density `|dF/dt|`.
pub fn side_normal(map: &GeometryMap, side: usize, x: Point) -> (Point, f64) {
    let j = map.jacobian(x);
    let ji = inv(j);
    let (row, sign, col) = match side {
        0 => (1, -1.0, 0),
        1 => (0, 1.0, 1),
        2 => (1, 1.0, 0),
        _ => (0, -1.0, 1),
    };
    let g = [sign * ji[row][0], sign * ji[row][1]];
    let ng = norm(g);
    let tangent = [j[0][col], j[1][col]];
    ([g[0] / ng, g[1] / ng], norm(tangent))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Outside,
    Inside,
}

/// Circular trim with the kept side; the angular restriction only records
/// which arc of the circle lies in the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimCurve {
    pub circle: Circle,
    pub keep: Keep,
    pub angles: Option<(f64, f64)>,
}

impl TrimCurve {
    pub fn new(circle: Circle, keep: Keep, angles: Option<(f64, f64)>) -> Result<Self> {
        if !(circle.radius > 0.0) {
            return Err(Error::Geometry("trim radius must be positive".into()));
        }
        if let Some((a, b)) = angles {
            if !(b > a) {
                return Err(Error::Geometry("degenerate angular restriction".into()));
            }
        }
        Ok(Self { circle, keep, angles })
    }

    /// Positive on the kept side, zero on the circle; the Euclidean signed distance.
    pub fn level_set(&self, x: Point) -> f64 {
        let d = dist(x, self.circle.center) - self.circle.radius;
        match self.keep {
            Keep::Outside => d,
            Keep::Inside => -d,
        }
    }

    /// Physical gradient of the level set.
    pub fn level_set_grad(&self, x: Point) -> Point {
        let d = sub(x, self.circle.center);
        let r = norm(d).max(1e-300);
        let s = if self.keep == Keep::Outside { 1.0 } else { -1.0 };
        [s * d[0] / r, s * d[1] / r]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Interior,
    Cut,
    Exterior,
}

/// Classifies the image of a parametric box against one trim. Polygonal maps
/// use exact point/segment distances to the mapped quadrilateral; curved maps
/// use a densely sampled boundary polygon.
pub fn classify_box(map: &GeometryMap, lo: Point, hi: Point, trim: &TrimCurve) -> ElementClass {
    let poly = box_polygon(map, lo, hi);
    let c = trim.circle.center;
    let r = trim.circle.radius;
    let dmax = poly.iter().map(|&p| dist(p, c)).fold(0.0, f64::max);
    let dmin = if point_in_polygon(c, &poly) {
        0.0
    } else {
        (0..poly.len()).map(|i| seg_dist(c, poly[i], poly[(i + 1) % poly.len()])).fold(f64::INFINITY, f64::min)
    };
    let (all_in_disc, no_overlap) = (dmax <= r, dmin >= r);
    match trim.keep {
        Keep::Outside if no_overlap => ElementClass::Interior,
        Keep::Outside if all_in_disc => ElementClass::Exterior,
        Keep::Inside if all_in_disc => ElementClass::Interior,
        Keep::Inside if no_overlap => ElementClass::Exterior,
        _ => ElementClass::Cut,
    }
}

/// Combined class against several trims.
pub fn classify_box_all(map: &GeometryMap, lo: Point, hi: Point, trims: &[TrimCurve]) -> ElementClass {
    let mut class = ElementClass::Interior;
    for t in trims {
        match classify_box(map, lo, hi, t) {
            ElementClass::Exterior => return ElementClass::Exterior,
            ElementClass::Cut => class = ElementClass::Cut,
            ElementClass::Interior => {}
        }
    }
    class
}

/// Boundary polygon of the image of a parametric box (counter-clockwise in
/// parameter space).
pub fn box_polygon(map: &GeometryMap, lo: Point, hi: Point) -> Vec<Point> {
    let n = if map.is_polygonal() { 1 } else { 16 };
    let mut pts = Vec::with_capacity(4 * n);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    for k in 0..n {
        pts.push(map.map([lerp(lo[0], hi[0], k as f64 / n as f64), lo[1]]));
    }
    for k in 0..n {
        pts.push(map.map([hi[0], lerp(lo[1], hi[1], k as f64 / n as f64)]));
    }
    for k in 0..n {
        pts.push(map.map([lerp(hi[0], lo[0], k as f64 / n as f64), hi[1]]));
    }
    for k in 0..n {
        pts.push(map.map([lo[0], lerp(hi[1], lo[1], k as f64 / n as f64)]));
    }
    pts
}

pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 > 0.0 { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Disc sector `{ c + r (cos θ, sin θ) : r < radius, θ0 < θ < θ1 }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub center: Point,
    pub radius: f64,
    pub theta0: f64,
    pub theta1: f64,
}

impl Sector {
    pub fn disc(center: Point, radius: f64) -> Self {
        Sector { center, radius, theta0: 0.0, theta1: 2.0 * PI }
    }

    pub fn is_full(&self) -> bool {
        self.theta1 - self.theta0 >= 2.0 * PI - 1e-12
    }

    pub fn arc_length(&self) -> f64 {
        self.radius * (self.theta1 - self.theta0)
    }

    pub fn area(&self) -> f64 {
        0.5 * self.radius * self.radius * (self.theta1 - self.theta0)
    }

    pub fn point(&self, th: f64) -> Point {
        [self.center[0] + self.radius * th.cos(), self.center[1] + self.radius * th.sin()]
    }

    pub fn circle(&self) -> Circle {
        Circle { center: self.center, radius: self.radius }
    }

    /// Removal trim: the open disc is cut away.
    pub fn removal_trim(&self) -> TrimCurve {
        let angles = (!self.is_full()).then_some((self.theta0, self.theta1));
        TrimCurve { circle: self.circle(), keep: Keep::Outside, angles }
    }

    /// Chord closing a partial sector, from the arc end back to the arc start.
    pub fn chord(&self) -> Option<(Point, Point)> {
        (!self.is_full()).then(|| (self.point(self.theta1), self.point(self.theta0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchRole {
    Base,
    /// Extension patch `F̃_p` of the positive feature with this id.
    Extension(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideTag {
    Dirichlet,
    Neumann,
    /// Side of an extension patch on `γ̃`.
    Tilde,
    Interface {
        patch: usize,
        side: usize,
        reversed: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub map: GeometryMap,
    pub sides: [SideTag; 4],
    pub role: PatchRole,
}

/// Patches with detected full-side interfaces. All patches share the degree
/// and the root grid so that interface knot lines coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipatchTopology {
    pub patches: Vec<Patch>,
    pub degree: usize,
    pub root: usize,
}

impl MultipatchTopology {
    /// Detects interfaces geometrically; sides without a partner keep the
    /// given boundary tag.
    pub fn new(specs: Vec<(GeometryMap, [SideTag; 4], PatchRole)>, degree: usize, root: usize) -> Result<Self> {
        let mut patches: Vec<Patch> = Vec::with_capacity(specs.len());
        for (map, sides, role) in specs {
            patches.push(Patch { map: map.checked()?, sides, role });
        }
        let n = patches.len();
        let scale =
            patches.iter().flat_map(|p| box_polygon(&p.map, [0.0, 0.0], [1.0, 1.0])).map(norm).fold(1.0, f64::max);
        let tol = 1e-10 * scale;
        for a in 0..n {
            for s in 0..4 {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    for t in 0..4 {
                        let pa = |u: f64| patches[a].map.map(side_point(s, u));
                        let pb = |u: f64| patches[b].map.map(side_point(t, u));
                        let same = dist(pa(0.0), pb(0.0)) < tol && dist(pa(1.0), pb(1.0)) < tol;
                        let rev = dist(pa(0.0), pb(1.0)) < tol && dist(pa(1.0), pb(0.0)) < tol;
                        if !same && !rev {
                            continue;
                        }
                        let mid_ok = dist(pa(0.5), pb(0.5)) < tol;
                        if !mid_ok {
                            continue;
                        }
                        // the side parametrizations must agree at every knot line
                        for k in 1..16 {
                            let u = k as f64 / 16.0;
                            let v = if rev { 1.0 - u } else { u };
                            if dist(pa(u), pb(v)) > tol {
                                return Err(Error::Topology(format!(
                                    "interface between patch {} side {} and patch {} side {} has mismatched parametrizations",
                                    a, s, b, t
                                )));
                            }
                        }
                        patches[a].sides[s] = SideTag::Interface { patch: b, side: t, reversed: rev && !same };
                    }
                }
            }
        }
        Ok(Self { patches, degree, root })
    }

    /// Sides of a patch glued to base patches (`γ_{0,p}` for an extension patch).
    pub fn glued_sides(&self, patch: usize) -> Vec<usize> {
        (0..4)
            .filter(|&s| match self.patches[patch].sides[s] {
                SideTag::Interface { patch: q, .. } => self.patches[q].role == PatchRole::Base,
                _ => false,
            })
            .collect()
    }

    /// Interfaces as `(a, side_a, b, side_b, reversed)` with `a < b`.
    pub fn interfaces(&self) -> Vec<(usize, usize, usize, usize, bool)> {
        let mut out = Vec::new();
        for (a, p) in self.patches.iter().enumerate() {
            for (s, tag) in p.sides.iter().enumerate() {
                if let SideTag::Interface { patch: b, side: t, reversed } = *tag {
                    if a < b {
                        out.push((a, s, b, t, reversed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub enum FeatureKind {
    Negative,
    Positive,
}

/// A geometric feature: a hole cut from a host patch (negative), or an
/// extension patch `F̃_p` minus a disc sector `G_p` (positive).
#[derive(Clone)]
pub struct Feature {
    pub id: usize,
    pub kind: FeatureKind,
    /// Host patch (negative) or extension patch (positive).
    pub patch: usize,
    /// `F_n` for negative features, `G_p` for positive ones.
    pub sector: Sector,
    /// Neumann data of the exact problem on the feature boundary.
    pub g: FluxField,
    /// Neumann data of the simplified problem on `γ_0`.
    pub g0: FluxField,
    /// Neumann data of the extension problem on `γ̃`.
    pub g_tilde: FluxField,
}

impl std::fmt::Debug for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Feature")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("patch", &self.patch)
            .field("sector", &self.sector)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub enum SigmaKind {
    GammaN,
    Gamma0p,
    GammaR,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaGeom {
    /// Arc of a circle inside `patch`; `inward` flips the normal toward the center.
    Arc { patch: usize, center: Point, radius: f64, theta0: f64, theta1: f64, inward: bool },
    /// Full sides of `patch`, normal pointing out of the patch.
    Sides { patch: usize, sides: Vec<usize> },
}

/// One boundary piece σ of Σ^k.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPiece {
    pub feature: usize,
    pub kind: SigmaKind,
    pub geom: SigmaGeom,
    pub length: f64,
}

impl SigmaPiece {
    /// Outward normal of the feature at a point of an arc piece.
    pub fn arc_normal(&self, x: Point) -> Option<Point> {
        match self.geom {
            SigmaGeom::Arc { center, inward, .. } => {
                let d = sub(x, center);
                let r = norm(d);
                let s = if inward { -1.0 } else { 1.0 };
                Some([s * d[0] / r, s * d[1] / r])
            }
            SigmaGeom::Sides { .. } => None,
        }
    }
}

/// Which linear system a patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Region {
    Defeatured,
    Extension(usize),
}

/// `Ω_0^{(i)}` together with the not-yet-inserted features.
#[derive(Debug, Clone)]
pub struct DefeaturedModel {
    pub topology: MultipatchTopology,
    pub features: Vec<Feature>,
    pub active: BTreeSet<usize>,
    pub iteration: usize,
}

impl DefeaturedModel {
    pub fn build(topology: MultipatchTopology, features: Vec<Feature>, active: BTreeSet<usize>) -> Result<Self> {
        let np = topology.patches.len();
        for (i, f) in features.iter().enumerate() {
            if f.patch >= np {
                return Err(Error::Geometry(format!("feature {} refers to missing patch {}", f.id, f.patch)));
            }
            if !(f.sector.radius > 0.0) || !(f.sector.theta1 > f.sector.theta0) {
                return Err(Error::Geometry(format!("feature {} has a degenerate sector", f.id)));
            }
            for g in &features[i + 1..] {
                if g.id == f.id {
                    return Err(Error::Geometry(format!("duplicate feature id {}", f.id)));
                }
                let d = dist(f.sector.center, g.sector.center);
                if d < f.sector.radius + g.sector.radius {
                    return Err(Error::Geometry(format!("features {} and {} overlap", f.id, g.id)));
                }
            }
            let patch = &topology.patches[f.patch];
            match f.kind {
                FeatureKind::Negative => {
                    if patch.role != PatchRole::Base {
                        return Err(Error::Geometry(format!("hole {} must sit on a base patch", f.id)));
                    }
                    for k in 0..=32 {
                        let th = f.sector.theta0 + (f.sector.theta1 - f.sector.theta0) * k as f64 / 32.0;
                        if patch.map.inverse(f.sector.point(th)).is_none() {
                            return Err(Error::Geometry(format!("hole {} leaves its host patch {}", f.id, f.patch)));
                        }
                    }
                }
                FeatureKind::Positive => {
                    if patch.role != PatchRole::Extension(f.id) {
                        return Err(Error::Topology(format!(
                            "patch {} is not the extension patch of feature {}",
                            f.patch, f.id
                        )));
                    }
                    if topology.glued_sides(f.patch).is_empty() {
                        return Err(Error::Topology(format!(
                            "extension patch of feature {} has no side on the base boundary",
                            f.id
                        )));
                    }
                }
            }
        }
        for a in &active {
            if !features.iter().any(|f| f.id == *a) {
                return Err(Error::Argument(format!("unknown feature id {}", a)));
            }
        }
        Ok(Self { topology, features, active, iteration: 0 })
    }

    pub fn feature(&self, id: usize) -> &Feature {
        self.features.iter().find(|f| f.id == id).expect("known feature id")
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active.contains(&id)
    }

    pub fn inactive_features(&self) -> Vec<&Feature> {
        self.features.iter().filter(|f| !self.active.contains(&f.id)).collect()
    }

    pub fn region(&self, patch: usize) -> Region {
        match self.topology.patches[patch].role {
            PatchRole::Base => Region::Defeatured,
            PatchRole::Extension(k) if self.is_active(k) => Region::Defeatured,
            PatchRole::Extension(k) => Region::Extension(k),
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        let mut r: Vec<Region> = (0..self.topology.patches.len()).map(|p| self.region(p)).collect();
        r.sort();
        r.dedup();
        r
    }

    /// Trims defining the computational domain of a patch.
    pub fn solve_trims(&self, patch: usize) -> Vec<TrimCurve> {
        self.features
            .iter()
            .filter(|f| f.patch == patch)
            .filter(|f| self.is_active(f.id))
            .map(|f| f.sector.removal_trim())
            .collect()
    }

    /// Trims describing the exact domain `Ω` restricted to a patch.
    pub fn exact_trims(&self, patch: usize) -> Vec<TrimCurve> {
        self.features.iter().filter(|f| f.patch == patch).map(|f| f.sector.removal_trim()).collect()
    }

    pub fn classify_element(&self, patch: usize, lo: Point, hi: Point) -> ElementClass {
        classify_box_all(&self.topology.patches[patch].map, lo, hi, &self.solve_trims(patch))
    }

    /// Boundary pieces Σ^k of every inactive feature.
    pub fn sigma_pieces(&self) -> Vec<SigmaPiece> {
        let mut out = Vec::new();
        for f in self.inactive_features() {
            let s = f.sector;
            match f.kind {
                FeatureKind::Negative => out.push(SigmaPiece {
                    feature: f.id,
                    kind: SigmaKind::GammaN,
                    geom: SigmaGeom::Arc {
                        patch: f.patch,
                        center: s.center,
                        radius: s.radius,
                        theta0: s.theta0,
                        theta1: s.theta1,
                        inward: false,
                    },
                    length: s.arc_length(),
                }),
                FeatureKind::Positive => {
                    let patch = &self.topology.patches[f.patch];
                    let sides = self.topology.glued_sides(f.patch);
                    out.push(SigmaPiece {
                        feature: f.id,
                        kind: SigmaKind::Gamma0p,
                        length: sides.iter().map(|&s| side_length(&patch.map, s)).sum(),
                        geom: SigmaGeom::Sides { patch: f.patch, sides },
                    });
                    out.push(SigmaPiece {
                        feature: f.id,
                        kind: SigmaKind::GammaR,
                        geom: SigmaGeom::Arc {
                            patch: f.patch,
                            center: s.center,
                            radius: s.radius,
                            theta0: s.theta0,
                            theta1: s.theta1,
                            inward: true,
                        },
                        length: s.arc_length(),
                    });
                }
            }
        }
        out
    }
}

/// Length of a patch side, by composite Gauss quadrature of `|dF/dt|`.
pub fn side_length(map: &GeometryMap, side: usize) -> f64 {
    let (x, w) = crate::quadrature::gauss_legendre(10);
    let mut l = 0.0;
    for k in 0..16 {
        for (xi, wi) in x.iter().zip(&w) {
            let t = (k as f64 + xi) / 16.0;
            l += wi / 16.0 * side_normal(map, side, side_point(side, t)).1;
        }
    }
    l
}

/// Per-feature ratio diam(S) / smallest size of the elements meeting S.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMeshRatio {
    pub feature: usize,
    pub ratio: f64,
    pub warning: bool,
}

/// Evaluates the feature/mesh size ratio; `element_sizes` returns the sizes of
/// elements of a patch whose images meet a given disc.
pub fn check_feature_mesh_ratio(
    model: &DefeaturedModel,
    element_sizes: impl Fn(usize, &Circle) -> Vec<f64>,
) -> Vec<FeatureMeshRatio> {
    model
        .features
        .iter()
        .map(|f| {
            let diam = match f.kind {
                FeatureKind::Negative => 2.0 * f.sector.radius,
                FeatureKind::Positive => {
                    let poly = box_polygon(&model.topology.patches[f.patch].map, [0.0; 2], [1.0; 2]);
                    let mut d: f64 = 0.0;
                    for a in &poly {
                        for b in &poly {
                            d = d.max(dist(*a, *b));
                        }
                    }
                    d
                }
            };
            let hmin = element_sizes(f.patch, &f.sector.circle()).into_iter().fold(f64::INFINITY, f64::min);
            let ratio = if hmin.is_finite() { diam / hmin } else { 0.0 };
            FeatureMeshRatio { feature: f.id, ratio, warning: ratio > 4.0 }
        })
        .collect()
}
