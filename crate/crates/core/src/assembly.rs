//! Galerkin assembly, Dirichlet lifting and solution of the defeatured and
//! extension problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::discretization::{
    interface_pairs, physical_derivatives, physical_gradients, side_edge, touches_side, DofMap, ModelSpace,
};
use crate::error::{Error, Result};
use crate::geometry::{
    side_normal, DefeaturedModel, Feature, FeatureKind, FluxField, Point, Region, ScalarField, SideTag,
};
use crate::linalg::{pcg, CsrMatrix};
use crate::quadrature::{arc_rule, cut_cell_rule, gauss_legendre, gauss_rule, trim_arc_in_element};

pub type VectorField = Arc<dyn Fn(Point) -> Point + Send + Sync>;

#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarField,
    pub grad: VectorField,
}

/// Data of the exact and defeatured problems on the base domain. Flux data
/// receive the outward unit normal of the domain on whose boundary they live.
#[derive(Clone)]
pub struct ProblemData {
    pub f: ScalarField,
    pub g_dirichlet: ScalarField,
    pub g_neumann: FluxField,
    pub exact: Option<ExactSolution>,
}

/// Neumann datum attached to a boundary side of a region patch.
#[derive(Clone)]
enum SideFlux {
    Base,
    Feature(FluxField),
}

fn side_flux(model: &DefeaturedModel, region: Region, patch: usize, side: usize) -> Option<SideFlux> {
    let topo = &model.topology;
    match (topo.patches[patch].sides[side], region) {
        (SideTag::Dirichlet, _) => None,
        (SideTag::Interface { patch: q, .. }, _) if model.region(q) == region => None,
        // γ_{0,p} seen from the base side
        (SideTag::Interface { patch: q, .. }, Region::Defeatured) => {
            let id = match topo.patches[q].role {
                crate::geometry::PatchRole::Extension(k) => k,
                crate::geometry::PatchRole::Base => return None,
            };
            Some(SideFlux::Feature(model.feature(id).g0.clone()))
        }
        (SideTag::Interface { .. }, Region::Extension(_)) => None,
        (SideTag::Tilde, Region::Extension(k)) => Some(SideFlux::Feature(model.feature(k).g_tilde.clone())),
        (SideTag::Tilde, Region::Defeatured) | (SideTag::Neumann, Region::Extension(_)) => {
            let id = match topo.patches[patch].role {
                crate::geometry::PatchRole::Extension(k) => k,
                crate::geometry::PatchRole::Base => return Some(SideFlux::Base),
            };
            Some(SideFlux::Feature(model.feature(id).g.clone()))
        }
        (SideTag::Neumann, Region::Defeatured) => Some(SideFlux::Base),
    }
}

/// Neumann value on a Neumann side of the region at `x`: inside an inactive
/// negative feature touching the boundary the datum is `g₀`.
fn eval_side_flux(model: &DefeaturedModel, data: &ProblemData, sf: &SideFlux, x: Point, n: Point) -> f64 {
    match sf {
        SideFlux::Feature(g) => g(x, n),
        SideFlux::Base => {
            for f in model.inactive_features() {
                if f.kind == FeatureKind::Negative && f.sector.removal_trim().level_set(x) < 0.0 {
                    return (f.g0)(x, n);
                }
            }
            (data.g_neumann)(x, n)
        }
    }
}

/// Boundary pieces integrated for the load and the residual estimator:
/// `(patch, element, physical point, parametric point, weight, normal, datum)`.
pub struct BoundaryPoint {
    pub patch: usize,
    pub element: usize,
    pub x: Point,
    pub xi: Point,
    pub w: f64,
    pub n: Point,
    pub g: f64,
}

/// Gauss points on the Neumann sides of a region, grouped by element edge:
/// `(patch, element, side, points)`.
pub fn neumann_edges(
    model: &DefeaturedModel,
    space: &ModelSpace,
    data: &ProblemData,
    region: Region,
    patches: &[usize],
) -> Vec<(usize, usize, usize, Vec<BoundaryPoint>)> {
    let (gx, gw) = gauss_legendre(space.q);
    let mut out = Vec::new();
    for &p in patches {
        let ps = &space.patches[p];
        let map = &model.topology.patches[p].map;
        for s in 0..4 {
            let Some(sf) = side_flux(model, region, p, s) else { continue };
            for (e, &c) in ps.basis.cells().iter().enumerate() {
                if !touches_side(ps.basis.mesh(), c, s) || !ps.elements[e].is_active() {
                    continue;
                }
                let (a, b) = side_edge(ps.basis.mesh(), c, s);
                let dt = (b[0] - a[0]) + (b[1] - a[1]);
                let mut pts = Vec::with_capacity(gx.len());
                for (t, w) in gx.iter().zip(&gw) {
                    let xi = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    let x = map.map(xi);
                    if !ps.kept(x) {
                        continue;
                    }
                    let (n, dens) = side_normal(map, s, xi);
                    let g = eval_side_flux(model, data, &sf, x, n);
                    pts.push(BoundaryPoint { patch: p, element: e, x, xi, w: w * dt * dens, n, g });
                }
                out.push((p, e, s, pts));
            }
        }
    }
    out
}

/// Gauss points on the active trim arcs of a region, by cut element.
pub fn trim_arc_points(
    model: &DefeaturedModel,
    space: &ModelSpace,
    patches: &[usize],
) -> Vec<(usize, usize, Vec<BoundaryPoint>)> {
    let q = space.q.max(6);
    let mut out = Vec::new();
    for &p in patches {
        let ps = &space.patches[p];
        let map = &model.topology.patches[p].map;
        let feats: Vec<&Feature> = model.features.iter().filter(|f| f.patch == p && model.is_active(f.id)).collect();
        for (e, el) in ps.elements.iter().enumerate() {
            if el.class != crate::geometry::ElementClass::Cut || !el.is_active() {
                continue;
            }
            let b = ps.basis.mesh().cell_box(el.cell);
            let mut pts = Vec::new();
            for f in &feats {
                let s = f.sector;
                for (t0, t1) in
                    trim_arc_in_element(map, b.lo, b.hi, s.center, s.radius, 0.0, 2.0 * std::f64::consts::PI)
                {
                    let r = arc_rule(s.center, s.radius, t0, t1, q);
                    for (x, w) in r.nodes.iter().zip(&r.weights) {
                        if !ps.kept_except(*x, &f.sector.removal_trim()) {
                            continue;
                        }
                        let Some(xi) = map.inverse(*x) else { continue };
                        let n = [(s.center[0] - x[0]) / s.radius, (s.center[1] - x[1]) / s.radius];
                        pts.push(BoundaryPoint { patch: p, element: e, x: *x, xi, w: *w, n, g: (f.g)(*x, n) });
                    }
                }
            }
            if !pts.is_empty() {
                out.push((p, e, pts));
            }
        }
    }
    out
}

/// Assembled system of one region before essential conditions.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

pub fn assemble(
    model: &DefeaturedModel,
    space: &ModelSpace,
    dofs: &DofMap,
    data: &ProblemData,
) -> Result<SparseSystem> {
    if dofs.global.len() != space.patches.len() {
        return Err(Error::Argument("dof map and space disagree".into()));
    }
    let mut tasks = Vec::new();
    for &p in &dofs.patches {
        for e in 0..space.patches[p].elements.len() {
            tasks.push((p, e));
        }
    }
    let locals: Vec<(Vec<(usize, usize, f64)>, Vec<(usize, f64)>)> = tasks
        .par_iter()
        .map(|&(p, e)| {
            let ps = &space.patches[p];
            let el = &ps.elements[e];
            let map = &model.topology.patches[p].map;
            let ld = dofs.element_dofs(space, p, e);
            let mut trip = Vec::new();
            let mut load = Vec::new();
            if !el.is_active() || ld.is_empty() {
                return (trip, load);
            }
            let m = ld.len();
            let mut k = vec![0.0; m * m];
            let mut r = vec![0.0; m];
            for (xi, w) in el.rule.nodes.iter().zip(&el.rule.weights) {
                let jets = ps.basis.eval_in_cell(e, *xi, 1);
                let (grads, dj) = physical_gradients(map, *xi, &jets);
                let fx = (data.f)(map.map(*xi));
                // jets are sorted by local id; ld follows the same order
                let pos: Vec<usize> =
                    ld.iter().map(|(id, _)| jets.binary_search_by_key(id, |j| j.0).unwrap()).collect();
                for a in 0..m {
                    let ga = grads[pos[a]];
                    r[a] += w * dj * fx * jets[pos[a]].1[0];
                    for b in a..m {
                        let gb = grads[pos[b]];
                        k[a * m + b] += w * dj * (ga[0] * gb[0] + ga[1] * gb[1]);
                    }
                }
            }
            for a in 0..m {
                for b in a..m {
                    let v = k[a * m + b];
                    trip.push((ld[a].1, ld[b].1, v));
                    if a != b {
                        trip.push((ld[b].1, ld[a].1, v));
                    }
                }
                load.push((ld[a].1, r[a]));
            }
            (trip, load)
        })
        .collect();
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; dofs.n];
    for (t, l) in locals {
        trip.extend(t);
        for (i, v) in l {
            rhs[i] += v;
        }
    }
    let boundary = neumann_edges(model, space, data, dofs.region, &dofs.patches);
    let arcs = trim_arc_points(model, space, &dofs.patches);
    let all_points =
        boundary.iter().flat_map(|(_, _, _, pts)| pts.iter()).chain(arcs.iter().flat_map(|(_, _, pts)| pts.iter()));
    for bp in all_points {
        if bp.g == 0.0 {
            continue;
        }
        for (id, jet) in space.patches[bp.patch].basis.eval_in_cell(bp.element, bp.xi, 0) {
            if let Some(g) = dofs.global[bp.patch][id] {
                rhs[g] += bp.w * bp.g * jet[0];
            }
        }
    }
    Ok(SparseSystem { matrix: CsrMatrix::from_triplets(dofs.n, trip), rhs })
}

/// L² projection of `g_D` onto the traces of the fixed unknowns on the
/// Dirichlet sides of the region.
pub fn dirichlet_projection(
    model: &DefeaturedModel,
    space: &ModelSpace,
    dofs: &DofMap,
    g_d: &ScalarField,
    rel_tol: f64,
) -> Result<BTreeMap<usize, f64>> {
    let fixed: Vec<usize> = dofs.fixed.iter().copied().collect();
    let tagged = dofs.patches.iter().any(|&p| model.topology.patches[p].sides.contains(&SideTag::Dirichlet));
    if fixed.is_empty() || !tagged {
        return Ok(BTreeMap::new());
    }
    let local: BTreeMap<usize, usize> = fixed.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let (gx, gw) = gauss_legendre(space.q + 2);
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; fixed.len()];
    let mut measure = 0.0;
    for &p in &dofs.patches {
        let ps = &space.patches[p];
        let map = &model.topology.patches[p].map;
        for s in 0..4 {
            if model.topology.patches[p].sides[s] != SideTag::Dirichlet {
                continue;
            }
            for (e, &c) in ps.basis.cells().iter().enumerate() {
                if !touches_side(ps.basis.mesh(), c, s) {
                    continue;
                }
                let (a, b) = side_edge(ps.basis.mesh(), c, s);
                let dt = (b[0] - a[0]) + (b[1] - a[1]);
                for (t, w) in gx.iter().zip(&gw) {
                    let xi = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    let x = map.map(xi);
                    let (_, dens) = side_normal(map, s, xi);
                    let ww = w * dt * dens;
                    measure += ww;
                    let vals: Vec<(usize, f64)> = ps
                        .basis
                        .eval_in_cell(e, xi, 0)
                        .into_iter()
                        .filter_map(|(id, j)| dofs.global[p][id].and_then(|g| local.get(&g).map(|&l| (l, j[0]))))
                        .collect();
                    let gv = g_d(x);
                    for &(i, vi) in &vals {
                        rhs[i] += ww * gv * vi;
                        for &(j, vj) in &vals {
                            trip.push((i, j, ww * vi * vj));
                        }
                    }
                }
            }
        }
    }
    if measure <= 0.0 {
        return Err(Error::Argument("the Dirichlet boundary has zero measure".into()));
    }
    // unknowns fixed by other means (extension interfaces) carry no trace here
    let m = CsrMatrix::from_triplets(fixed.len(), trip);
    let keep: Vec<usize> = (0..fixed.len()).filter(|&i| m.get(i, i) > 0.0).collect();
    let pos: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(k, i)| (*i, k)).collect();
    let mut sub = Vec::new();
    for &i in &keep {
        for (j, v) in m.row(i) {
            if let Some(&pj) = pos.get(&j) {
                sub.push((pos[&i], pj, v));
            }
        }
    }
    let sub = CsrMatrix::from_triplets(keep.len(), sub);
    let sub_rhs: Vec<f64> = keep.iter().map(|&i| rhs[i]).collect();
    let (x, _) = pcg(&sub, &sub_rhs, rel_tol)?;
    Ok(keep.iter().zip(x).map(|(i, v)| (fixed[*i], v)).collect())
}

/// Values of the unknowns on `γ_{0,p}` of an extension region, copied from
/// the matched unknowns of the defeatured solution.
pub fn extension_trace(
    model: &DefeaturedModel,
    space: &ModelSpace,
    ext: &DofMap,
    host: &DofMap,
    host_coeffs: &[f64],
) -> Result<BTreeMap<usize, f64>> {
    let mut vals = BTreeMap::new();
    for (a, s, b, t, rev) in model.topology.interfaces() {
        let (e, es, h, pairs) = if ext.patches.contains(&a) && host.patches.contains(&b) {
            (a, s, b, interface_pairs(space, a, s, b, t, rev)?)
        } else if ext.patches.contains(&b) && host.patches.contains(&a) {
            let pairs = interface_pairs(space, a, s, b, t, rev)?.into_iter().map(|(x, y)| (y, x)).collect();
            (b, t, a, pairs)
        } else {
            continue;
        };
        let _ = es;
        for (ie, ih) in pairs {
            let Some(ge) = ext.global[e][ie] else { continue };
            if !ext.fixed.contains(&ge) {
                continue;
            }
            let gh = host.global[h][ih].ok_or_else(|| {
                Error::TraceCompatibility(format!(
                    "extension function {:?} on patch {} has no active host function on patch {}",
                    space.patches[e].basis.functions()[ie],
                    e,
                    h
                ))
            })?;
            vals.insert(ge, host_coeffs[gh]);
        }
    }
    for g in &ext.fixed {
        if !vals.contains_key(g) {
            return Err(Error::TraceCompatibility(format!(
                "unknown {} on the extension interface has no host value",
                g
            )));
        }
    }
    Ok(vals)
}

/// Eliminates fixed unknowns symmetrically and solves for the free ones.
pub fn solve_constrained(
    system: &SparseSystem,
    fixed: &BTreeMap<usize, f64>,
    rel_tol: f64,
) -> Result<(Vec<f64>, crate::linalg::CgStats, CsrMatrix, Vec<f64>)> {
    let n = system.matrix.n;
    let mut free_idx = vec![usize::MAX; n];
    let mut nf = 0;
    for (i, fi) in free_idx.iter_mut().enumerate() {
        if !fixed.contains_key(&i) {
            *fi = nf;
            nf += 1;
        }
    }
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; nf];
    for i in 0..n {
        if free_idx[i] == usize::MAX {
            continue;
        }
        let fi = free_idx[i];
        rhs[fi] += system.rhs[i];
        for (j, v) in system.matrix.row(i) {
            match fixed.get(&j) {
                Some(uj) => rhs[fi] -= v * uj,
                None => trip.push((fi, free_idx[j], v)),
            }
        }
    }
    let reduced = CsrMatrix::from_triplets(nf, trip);
    let (xf, stats) = pcg(&reduced, &rhs, rel_tol)?;
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = match fixed.get(&i) {
            Some(v) => *v,
            None => xf[free_idx[i]],
        };
    }
    Ok((x, stats, reduced, rhs))
}

/// A discrete solution on one region.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub dofs: DofMap,
    pub coeffs: Vec<f64>,
    pub cg: crate::linalg::CgStats,
    pub symmetry_defect: f64,
}

impl DiscreteField {
    /// Parametric jet of the field on element `e` of `patch`.
    pub fn jet(&self, space: &ModelSpace, patch: usize, e: usize, xi: Point, nder: usize) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (id, j) in space.patches[patch].basis.eval_in_cell(e, xi, nder) {
            if let Some(g) = self.dofs.global[patch][id] {
                let c = self.coeffs[g];
                for t in 0..6 {
                    out[t] += c * j[t];
                }
            }
        }
        out
    }

    /// Value, physical gradient and Laplacian.
    pub fn eval(
        &self,
        model: &DefeaturedModel,
        space: &ModelSpace,
        patch: usize,
        e: usize,
        xi: Point,
        nder: usize,
    ) -> (f64, Point, f64) {
        let jet = self.jet(space, patch, e, xi, nder);
        let (g, lap) = physical_derivatives(&model.topology.patches[patch].map, xi, &jet);
        (jet[0], g, lap)
    }

    /// Evaluation at a parametric point of a patch, locating the element.
    pub fn eval_at(
        &self,
        model: &DefeaturedModel,
        space: &ModelSpace,
        patch: usize,
        xi: Point,
        nder: usize,
    ) -> Result<(f64, Point, f64)> {
        let basis = &space.patches[patch].basis;
        let c = basis.mesh().locate(xi)?;
        let e = basis.cell_index(c).expect("located cell is active");
        Ok(self.eval(model, space, patch, e, xi, nder))
    }
}

/// Solves one region. Extension regions need the defeatured field.
pub fn solve_region(
    model: &DefeaturedModel,
    space: &ModelSpace,
    data: &ProblemData,
    region: Region,
    host: Option<&DiscreteField>,
    rel_tol: f64,
) -> Result<DiscreteField> {
    let dofs = DofMap::build(model, space, region)?;
    if region == Region::Defeatured && dofs.components(space) > 1 {
        return Err(Error::Geometry("the defeatured domain is disconnected".into()));
    }
    let mut sub = data.clone();
    if let Region::Extension(_) = region {
        // f is extended by the same expression; base Neumann data do not apply
        sub.g_neumann = Arc::new(|_, _| 0.0);
    }
    let system = assemble(model, space, &dofs, &sub)?;
    let symmetry_defect = system.matrix.symmetry_defect();
    let mut fixed = dirichlet_projection(model, space, &dofs, &data.g_dirichlet, rel_tol)?;
    if let Region::Extension(k) = region {
        let host = host.ok_or_else(|| Error::Argument(format!("extension {} needs the defeatured solution", k)))?;
        for (g, v) in extension_trace(model, space, &dofs, &host.dofs, &host.coeffs)? {
            fixed.insert(g, v);
        }
    } else if fixed.is_empty() {
        return Err(Error::Argument("the defeatured problem has no Dirichlet boundary".into()));
    }
    let (coeffs, cg, _, _) = solve_constrained(&system, &fixed, rel_tol)?;
    Ok(DiscreteField { dofs, coeffs, cg, symmetry_defect })
}

/// Solutions of every region of the model at one iteration.
#[derive(Debug, Clone)]
pub struct Solution {
    pub defeatured: DiscreteField,
    pub extensions: BTreeMap<usize, DiscreteField>,
}

impl Solution {
    pub fn field(&self, region: Region) -> &DiscreteField {
        match region {
            Region::Defeatured => &self.defeatured,
            Region::Extension(k) => &self.extensions[&k],
        }
    }

    /// Active defeatured unknowns plus the free unknowns of every extension.
    pub fn n_dof(&self) -> usize {
        self.defeatured.dofs.n + self.extensions.values().map(|f| f.dofs.n_free()).sum::<usize>()
    }

    pub fn max_cg_residual(&self) -> f64 {
        std::iter::once(&self.defeatured).chain(self.extensions.values()).map(|f| f.cg.rel_residual).fold(0.0, f64::max)
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        std::iter::once(&self.defeatured).chain(self.extensions.values()).map(|f| f.symmetry_defect).fold(0.0, f64::max)
    }
}

pub fn solve(model: &DefeaturedModel, space: &ModelSpace, data: &ProblemData, rel_tol: f64) -> Result<Solution> {
    let defeatured = solve_region(model, space, data, Region::Defeatured, None, rel_tol)?;
    let ext_ids: Vec<usize> = model
        .regions()
        .into_iter()
        .filter_map(|r| match r {
            Region::Extension(k) => Some(k),
            Region::Defeatured => None,
        })
        .collect();
    let fields: Vec<(usize, DiscreteField)> = ext_ids
        .par_iter()
        .map(|&k| solve_region(model, space, data, Region::Extension(k), Some(&defeatured), rel_tol).map(|f| (k, f)))
        .collect::<Result<_>>()?;
    Ok(Solution { defeatured, extensions: fields.into_iter().collect() })
}

/// `|u − u_d^h|_{1,Ω}` over the exact domain, with cut rules for the exact trims.
pub fn energy_error(model: &DefeaturedModel, space: &ModelSpace, sol: &Solution, exact: &ExactSolution) -> Result<f64> {
    let mut tasks = Vec::new();
    for p in 0..model.topology.patches.len() {
        for e in 0..space.patches[p].elements.len() {
            tasks.push((p, e));
        }
    }
    let parts: Vec<f64> = tasks
        .par_iter()
        .map(|&(p, e)| -> Result<f64> {
            let ps = &space.patches[p];
            let map = &model.topology.patches[p].map;
            let field = sol.field(model.region(p));
            let trims = model.exact_trims(p);
            let cell = ps.elements[e].cell;
            let b = ps.basis.mesh().cell_box(cell);
            let rule = if trims == ps.trims {
                ps.elements[e].rule.clone()
            } else {
                match crate::geometry::classify_box_all(map, b.lo, b.hi, &trims) {
                    crate::geometry::ElementClass::Interior => gauss_rule(b.lo, b.hi, space.q),
                    crate::geometry::ElementClass::Exterior => return Ok(0.0),
                    crate::geometry::ElementClass::Cut => cut_cell_rule(map, b.lo, b.hi, &trims, space.depth, space.q)?,
                }
            };
            let mut s = 0.0;
            for (xi, w) in rule.nodes.iter().zip(&rule.weights) {
                let (_, gh, _) = field.eval(model, space, p, e, *xi, 1);
                let x = map.map(*xi);
                let ge = (exact.grad)(x);
                let dj = crate::geometry::det(map.jacobian(*xi)).abs();
                s += w * dj * ((ge[0] - gh[0]).powi(2) + (ge[1] - gh[1]).powi(2));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}
