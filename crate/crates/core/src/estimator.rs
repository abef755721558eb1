//! Residual and defeaturing error estimators.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{neumann_edges, trim_arc_points, DiscreteField, ProblemData, Solution};
use crate::discretization::{side_edge, touches_side, ModelSpace};
use crate::error::{Error, Result};
use crate::geometry::{
    det, side_normal, side_point, DefeaturedModel, ElementClass, FluxField, GeometryMap, Point, Region, ScalarField,
    Sector, SideTag, SigmaGeom, SigmaKind, SigmaPiece,
};
use crate::hiermesh::Cell;
use crate::quadrature::{arc_rule, gauss_legendre, segment_rule, trim_arc_in_element};

/// Root of `η + log η = 0`, by Newton iteration from 0.5.
pub fn eta() -> f64 {
    static ETA: OnceLock<f64> = OnceLock::new();
    *ETA.get_or_init(|| {
        let mut x: f64 = 0.5;
        for _ in 0..100 {
            let step = (x + x.ln()) / (1.0 + 1.0 / x);
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x
    })
}

/// Scaling constant for a boundary piece or trimmed element of measure `measure` in dimension `n`.
pub fn c_sigma(measure: f64, n: usize) -> Result<f64> {
    if !(measure > 0.0) {
        return Err(Error::Argument(format!("measure must be positive, got {}", measure)));
    }
    match n {
        2 => Ok((-measure.ln()).max(eta()).sqrt()),
        3 => Ok(1.0),
        _ => Err(Error::Argument(format!("dimension {} not supported", n))),
    }
}

pub fn total_estimator(e_def: f64, e_num: f64, alpha_d: f64, alpha_n: f64) -> Result<f64> {
    if alpha_d < 0.0 || alpha_n < 0.0 {
        return Err(Error::Argument("estimator weights must be nonnegative".into()));
    }
    Ok(((alpha_d * e_def).powi(2) + (alpha_n * e_num).powi(2)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementIndicator {
    pub region: Region,
    pub patch: usize,
    pub element: usize,
    pub cell: Cell,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceReport {
    pub kind: SigmaKind,
    pub length: f64,
    /// Quadrature mean of the discrete defeaturing term.
    pub mean_discrete: f64,
    /// Mean computed from the data alone.
    pub mean_data: f64,
    pub oscillation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureIndicator {
    pub id: usize,
    pub e_def: f64,
    pub e_comp: f64,
    pub pieces: Vec<PieceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub iteration: usize,
    pub elements: Vec<ElementIndicator>,
    pub features: Vec<FeatureIndicator>,
    pub e_num: f64,
    pub e_def: f64,
    pub e_comp: f64,
    pub e_total: f64,
    pub alpha_d: f64,
    pub alpha_n: f64,
    pub eta: f64,
    pub n_dof: usize,
}

#[derive(Serialize)]
struct FeatureJson {
    id: usize,
    e_def: f64,
    e_comp: f64,
}

#[derive(Serialize)]
struct ReportJson {
    iteration: usize,
    e_total: f64,
    e_num: f64,
    e_def: f64,
    e_comp: f64,
    per_feature: Vec<FeatureJson>,
    n_dof: usize,
}

impl EstimatorReport {
    pub fn to_json(&self) -> String {
        let r = ReportJson {
            iteration: self.iteration,
            e_total: self.e_total,
            e_num: self.e_num,
            e_def: self.e_def,
            e_comp: self.e_comp,
            per_feature: self
                .features
                .iter()
                .map(|f| FeatureJson { id: f.id, e_def: f.e_def, e_comp: f.e_comp })
                .collect(),
            n_dof: self.n_dof,
        };
        serde_json::to_string_pretty(&r).expect("report serializes")
    }
}

fn region_patches(model: &DefeaturedModel, region: Region) -> Vec<usize> {
    (0..model.topology.patches.len()).filter(|&p| model.region(p) == region).collect()
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Squared residual indicators of one region, one entry per element with kept measure.
fn region_indicators(
    model: &DefeaturedModel,
    space: &ModelSpace,
    field: &DiscreteField,
    data: &ProblemData,
    region: Region,
) -> Result<Vec<ElementIndicator>> {
    let patches = region_patches(model, region);
    let mut tasks = Vec::new();
    for &p in &patches {
        for e in 0..space.patches[p].elements.len() {
            tasks.push((p, e));
        }
    }
    // interior residual h_K² ‖f + Δu‖², or δ_K² on cut elements
    let interior: Vec<f64> = tasks
        .par_iter()
        .map(|&(p, e)| -> Result<f64> {
            let el = &space.patches[p].elements[e];
            if !el.is_active() {
                return Ok(0.0);
            }
            let map = &model.topology.patches[p].map;
            let mut s = 0.0;
            for (xi, w) in el.rule.nodes.iter().zip(&el.rule.weights) {
                let (_, _, lap) = field.eval(model, space, p, e, *xi, 2);
                let r = (data.f)(map.map(*xi)) + lap;
                s += w * det(map.jacobian(*xi)).abs() * r * r;
            }
            let scale = match el.class {
                ElementClass::Cut => c_sigma(el.measure, 2)?.powi(2) * el.measure,
                _ => el.h * el.h,
            };
            Ok(scale * s)
        })
        .collect::<Result<_>>()?;
    let index: std::collections::BTreeMap<(usize, usize), usize> =
        tasks.iter().enumerate().map(|(k, t)| (*t, k)).collect();
    let mut sq = interior;

    let mut sub = data.clone();
    if let Region::Extension(_) = region {
        sub.g_neumann = std::sync::Arc::new(|_, _| 0.0);
    }
    for (p, e, _, pts) in neumann_edges(model, space, &sub, region, &patches) {
        if pts.is_empty() {
            continue;
        }
        let el = &space.patches[p].elements[e];
        let mut s = 0.0;
        let mut len = 0.0;
        for bp in &pts {
            let (_, g, _) = field.eval(model, space, p, e, bp.xi, 1);
            let j = bp.g - dot(g, bp.n);
            s += bp.w * j * j;
            len += bp.w;
        }
        let scale = if el.class == ElementClass::Cut { c_sigma(len, 2)?.powi(2) * len } else { len };
        sq[index[&(p, e)]] += scale * s;
    }
    for (p, e, pts) in trim_arc_points(model, space, &patches) {
        let el = &space.patches[p].elements[e];
        let mut s = 0.0;
        for bp in &pts {
            let (_, g, _) = field.eval(model, space, p, e, bp.xi, 1);
            let j = bp.g - dot(g, bp.n);
            s += bp.w * j * j;
        }
        sq[index[&(p, e)]] += el.h * s;
    }
    for (k, v) in interface_jumps(model, space, field, &patches)? {
        sq[index[&k]] += v;
    }

    Ok(tasks
        .iter()
        .zip(sq)
        .filter(|((p, e), _)| space.patches[*p].elements[*e].is_active())
        .map(|(&(p, e), s)| ElementIndicator {
            region,
            patch: p,
            element: e,
            cell: space.patches[p].elements[e].cell,
            value: s.max(0.0).sqrt(),
        })
        .collect())
}

/// Half of `h_E ‖[∂u/∂n]‖²` for both elements adjacent to each interface edge.
fn interface_jumps(
    model: &DefeaturedModel,
    space: &ModelSpace,
    field: &DiscreteField,
    patches: &[usize],
) -> Result<Vec<((usize, usize), f64)>> {
    let (gx, gw) = gauss_legendre(space.q);
    let mut out = Vec::new();
    for (a, s, b, t, rev) in model.topology.interfaces() {
        if !patches.contains(&a) || !patches.contains(&b) {
            continue;
        }
        let pa = &space.patches[a];
        let pb = &space.patches[b];
        let ma = &model.topology.patches[a].map;
        let mb = &model.topology.patches[b].map;
        for (ea, &ca) in pa.basis.cells().iter().enumerate() {
            if !touches_side(pa.basis.mesh(), ca, s) || !pa.elements[ea].is_active() {
                continue;
            }
            let (lo, hi) = side_edge(pa.basis.mesh(), ca, s);
            let dt = (hi[0] - lo[0]) + (hi[1] - lo[1]);
            let mut s_jump = 0.0;
            let mut len = 0.0;
            let mut eb = None;
            for (u, w) in gx.iter().zip(&gw) {
                let xa = [lo[0] + u * (hi[0] - lo[0]), lo[1] + u * (hi[1] - lo[1])];
                let ta = if s == 0 || s == 2 { xa[0] } else { xa[1] };
                let xb = side_point(t, if rev { 1.0 - ta } else { ta });
                let (na, dens) = side_normal(ma, s, xa);
                let ww = w * dt * dens;
                len += ww;
                let x = ma.map(xa);
                if !pa.kept(x) {
                    continue;
                }
                let e_b = match eb {
                    Some(e) => e,
                    None => {
                        let cb = locate_on_side(pb, xb, t)?;
                        let e = pb.basis.cell_index(cb).ok_or_else(|| {
                            Error::TraceCompatibility(format!("no element of patch {} at {:?}", b, xb))
                        })?;
                        eb = Some(e);
                        e
                    }
                };
                let (_, ga, _) = field.eval(model, space, a, ea, xa, 1);
                let (_, gb, _) = field.eval(model, space, b, e_b, xb, 1);
                let (nb, _) = side_normal(mb, t, xb);
                let jmp = dot(ga, na) + dot(gb, nb);
                s_jump += ww * jmp * jmp;
            }
            if let Some(e_b) = eb {
                let v = 0.5 * len * s_jump;
                out.push(((a, ea), v));
                out.push(((b, e_b), v));
            }
        }
    }
    Ok(out)
}

/// Active cell of a patch containing a side point, nudged off the side.
fn locate_on_side(ps: &crate::discretization::PatchSpace, xb: Point, side: usize) -> Result<Cell> {
    let mut x = xb;
    let d = 1e-9;
    match side {
        0 => x[1] += d,
        1 => x[0] -= d,
        2 => x[1] -= d,
        _ => x[0] += d,
    }
    ps.basis.mesh().locate(x)
}

/// Element indicators of every region in region, patch and element order.
pub fn numerical_estimator(
    model: &DefeaturedModel,
    space: &ModelSpace,
    sol: &Solution,
    data: &ProblemData,
) -> Result<Vec<ElementIndicator>> {
    let mut out = Vec::new();
    for region in model.regions() {
        out.extend(region_indicators(model, space, sol.field(region), data, region)?);
    }
    Ok(out)
}

/// `∫_S f` over a disc sector, by tensor Gauss quadrature in polar coordinates.
pub fn sector_integral(f: &ScalarField, s: &Sector) -> f64 {
    let (x, w) = gauss_legendre(12);
    let panels = 8;
    let dth = (s.theta1 - s.theta0) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        for (ti, wi) in x.iter().zip(&w) {
            let th = s.theta0 + (k as f64 + ti) * dth;
            let (c, sn) = (th.cos(), th.sin());
            for (ri, wr) in x.iter().zip(&w) {
                let r = ri * s.radius;
                let p = [s.center[0] + r * c, s.center[1] + r * sn];
                sum += wi * dth * wr * s.radius * r * f(p);
            }
        }
    }
    sum
}

/// `∫_P f` over the image of a patch.
pub fn patch_integral(f: &ScalarField, map: &GeometryMap) -> f64 {
    let (x, w) = gauss_legendre(8);
    let n = 4;
    let h = 1.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            for (xa, wa) in x.iter().zip(&w) {
                for (xb, wb) in x.iter().zip(&w) {
                    let xi = [(i as f64 + xa) * h, (j as f64 + xb) * h];
                    sum += wa * wb * h * h * det(map.jacobian(xi)).abs() * f(map.map(xi));
                }
            }
        }
    }
    sum
}

/// `∫ g(x, n)` over a patch side, `n` the outward normal of the patch times `sign`.
fn side_flux_integral(g: &FluxField, map: &GeometryMap, side: usize, sign: f64) -> f64 {
    let (x, w) = gauss_legendre(10);
    let mut sum = 0.0;
    for k in 0..16 {
        for (xi, wi) in x.iter().zip(&w) {
            let t = (k as f64 + xi) / 16.0;
            let xp = side_point(side, t);
            let (n, dens) = side_normal(map, side, xp);
            sum += wi / 16.0 * dens * g(map.map(xp), [sign * n[0], sign * n[1]]);
        }
    }
    sum
}

/// `∫ g(x, n)` over an arc, with the normal chosen by `normal`.
fn arc_flux_integral(g: &FluxField, s: &Sector, normal: impl Fn(Point) -> Point) -> f64 {
    let mut sum = 0.0;
    let panels = 16;
    let dth = (s.theta1 - s.theta0) / panels as f64;
    for k in 0..panels {
        let t0 = s.theta0 + k as f64 * dth;
        let r = arc_rule(s.center, s.radius, t0, t0 + dth, 10);
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            sum += w * g(*x, normal(*x));
        }
    }
    sum
}

/// Quadrature points of a Σ piece with the discrete defeaturing term at each.
fn piece_samples(
    model: &DefeaturedModel,
    space: &ModelSpace,
    sol: &Solution,
    piece: &SigmaPiece,
) -> Result<Vec<(f64, f64)>> {
    let f = model.feature(piece.feature);
    let q = (space.degree + 1).max(6);
    let mut out = Vec::new();
    match &piece.geom {
        SigmaGeom::Arc { patch, center, radius, theta0, theta1, .. } => {
            let p = *patch;
            let field = sol.field(model.region(p));
            let ps = &space.patches[p];
            let map = &model.topology.patches[p].map;
            for (e, &c) in ps.basis.cells().iter().enumerate() {
                let b = ps.basis.mesh().cell_box(c);
                for (t0, t1) in trim_arc_in_element(map, b.lo, b.hi, *center, *radius, *theta0, *theta1) {
                    let r = arc_rule(*center, *radius, t0, t1, q);
                    for (x, w) in r.nodes.iter().zip(&r.weights) {
                        let Some(xi) = map.inverse(*x) else { continue };
                        let n = piece.arc_normal(*x).expect("arc piece");
                        let (_, grad, _) = field.eval(model, space, p, e, xi, 1);
                        let d = match piece.kind {
                            // g lives on the boundary of Ω, whose normal is −n_F on γ_n
                            SigmaKind::GammaN => (f.g)(*x, [-n[0], -n[1]]) + dot(grad, n),
                            _ => (f.g)(*x, n) - dot(grad, n),
                        };
                        out.push((*w, d));
                    }
                }
            }
        }
        SigmaGeom::Sides { patch, sides } => {
            let p = *patch;
            let field = sol.field(model.region(p));
            let ps = &space.patches[p];
            let map = &model.topology.patches[p].map;
            let (gx, gw) = gauss_legendre(q);
            for &s in sides {
                for (e, &c) in ps.basis.cells().iter().enumerate() {
                    if !touches_side(ps.basis.mesh(), c, s) {
                        continue;
                    }
                    let (a, b) = side_edge(ps.basis.mesh(), c, s);
                    let dt = (b[0] - a[0]) + (b[1] - a[1]);
                    for (t, w) in gx.iter().zip(&gw) {
                        let xi = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                        let x = map.map(xi);
                        let (nt, dens) = side_normal(map, s, xi);
                        let (_, grad, _) = field.eval(model, space, p, e, xi, 1);
                        // g₀ receives the outward normal of Ω₀, opposite to ñ
                        let d = -(f.g0)(x, [-nt[0], -nt[1]]) - dot(grad, nt);
                        out.push((w * dt * dens, d));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean of the continuous defeaturing term of a piece, from the data only.
pub fn data_mean(model: &DefeaturedModel, data: &ProblemData, piece: &SigmaPiece) -> f64 {
    let f = model.feature(piece.feature);
    let s = f.sector;
    let inward = |x: Point| [(s.center[0] - x[0]) / s.radius, (s.center[1] - x[1]) / s.radius];
    match piece.kind {
        SigmaKind::GammaN => {
            let int_g = arc_flux_integral(&f.g, &s, inward);
            let int_g0 = match s.chord() {
                Some((a, b)) => {
                    // Ω₀ lies on the sector side of the chord; its normal points away from the arc
                    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    let am = s.point(0.5 * (s.theta0 + s.theta1));
                    let t = [b[0] - a[0], b[1] - a[1]];
                    let l = t[0].hypot(t[1]);
                    let mut n = [t[1] / l, -t[0] / l];
                    if dot(n, [mid[0] - am[0], mid[1] - am[1]]) < 0.0 {
                        n = [-n[0], -n[1]];
                    }
                    let r = segment_rule(a, b, 10);
                    r.nodes.iter().zip(&r.weights).map(|(x, w)| w * (f.g0)(*x, n)).sum()
                }
                None => 0.0,
            };
            (int_g - int_g0 - sector_integral(&data.f, &s)) / piece.length
        }
        SigmaKind::GammaR => {
            let int_g = arc_flux_integral(&f.g, &s, inward);
            let patch = &model.topology.patches[f.patch];
            let int_gt: f64 = (0..4)
                .filter(|&k| patch.sides[k] == SideTag::Tilde)
                .map(|k| side_flux_integral(&f.g_tilde, &patch.map, k, 1.0))
                .sum();
            (int_g - int_gt - sector_integral(&data.f, &s)) / piece.length
        }
        SigmaKind::Gamma0p => {
            let patch = &model.topology.patches[f.patch];
            let int_g0: f64 = model
                .topology
                .glued_sides(f.patch)
                .iter()
                .map(|&k| side_flux_integral(&f.g0, &patch.map, k, -1.0))
                .sum();
            let int_gs: f64 = (0..4)
                .filter(|&k| patch.sides[k] == SideTag::Neumann)
                .map(|k| side_flux_integral(&f.g, &patch.map, k, 1.0))
                .sum();
            let int_gp = arc_flux_integral(&f.g, &s, inward) + int_gs;
            let int_f = patch_integral(&data.f, &patch.map) - sector_integral(&data.f, &s);
            (int_g0 - int_gp - int_f) / piece.length
        }
    }
}

/// Defeaturing and compatibility indicators of every inactive feature, by id.
pub fn defeaturing_estimator(
    model: &DefeaturedModel,
    space: &ModelSpace,
    sol: &Solution,
    data: &ProblemData,
) -> Result<Vec<FeatureIndicator>> {
    let pieces = model.sigma_pieces();
    let reports: Vec<(usize, PieceReport)> = pieces
        .par_iter()
        .map(|piece| -> Result<(usize, PieceReport)> {
            let samples = piece_samples(model, space, sol, piece)?;
            let wsum: f64 = samples.iter().map(|s| s.0).sum();
            let mean_discrete = if wsum > 0.0 { samples.iter().map(|(w, d)| w * d).sum::<f64>() / wsum } else { 0.0 };
            let osc2: f64 = samples.iter().map(|(w, d)| w * (d - mean_discrete).powi(2)).sum();
            let mean_data = data_mean(model, data, piece);
            Ok((
                piece.feature,
                PieceReport {
                    kind: piece.kind,
                    length: piece.length,
                    mean_discrete,
                    mean_data,
                    oscillation: osc2.sqrt(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut ids: Vec<usize> = model.inactive_features().iter().map(|f| f.id).collect();
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| {
            let mine: Vec<PieceReport> = reports.iter().filter(|(k, _)| *k == id).map(|(_, r)| r.clone()).collect();
            let mut comp2 = 0.0;
            let mut osc2 = 0.0;
            for r in &mine {
                comp2 += c_sigma(r.length, 2)?.powi(2) * r.length.powi(2) * r.mean_data.powi(2);
                osc2 += r.length * r.oscillation.powi(2);
            }
            Ok(FeatureIndicator { id, e_def: (osc2 + comp2).sqrt(), e_comp: comp2.sqrt(), pieces: mine })
        })
        .collect()
}

pub fn estimate(
    model: &DefeaturedModel,
    space: &ModelSpace,
    sol: &Solution,
    data: &ProblemData,
    alpha_d: f64,
    alpha_n: f64,
) -> Result<EstimatorReport> {
    let elements = numerical_estimator(model, space, sol, data)?;
    let features = defeaturing_estimator(model, space, sol, data)?;
    let e_num = elements.iter().fold(0.0, |s, e| s + e.value * e.value).sqrt();
    let e_def = features.iter().fold(0.0, |s, f| s + f.e_def * f.e_def).sqrt();
    let e_comp = features.iter().fold(0.0, |s, f| s + f.e_comp * f.e_comp).sqrt();
    let e_total = total_estimator(e_def, e_num, alpha_d, alpha_n)?;
    for v in elements.iter().map(|e| e.value).chain(features.iter().map(|f| f.e_def)) {
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite estimator contribution".into()));
        }
    }
    Ok(EstimatorReport {
        iteration: model.iteration,
        elements,
        features,
        e_num,
        e_def,
        e_comp,
        e_total,
        alpha_d,
        alpha_n,
        eta: eta(),
        n_dof: sol.n_dof(),
    })
}
