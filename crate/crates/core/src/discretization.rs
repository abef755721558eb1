//! Per-patch meshes, trimmed element data and global degree-of-freedom maps.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    classify_box_all, det, DefeaturedModel, ElementClass, GeometryMap, MultipatchTopology, Point, Region, SideTag,
    TrimCurve,
};
use crate::hiermesh::{Cell, HierarchicalMesh, ThbBasis};
use crate::quadrature::{cut_cell_rule, gauss_rule, physical_measure, QuadratureRule};

/// Cell at tangential index `i` and normal depth `d` from `side` on a level
/// with `n` elements per direction.
pub fn side_cell(side: usize, level: usize, n: usize, i: usize, d: usize) -> Cell {
    match side {
        0 => Cell::new(level, i, d),
        1 => Cell::new(level, n - 1 - d, i),
        2 => Cell::new(level, i, n - 1 - d),
        _ => Cell::new(level, d, i),
    }
}

/// Tangential index of a tensor function lying on `side`, if it does.
pub fn side_function(side: usize, nf: usize, f: [usize; 2]) -> Option<usize> {
    match side {
        0 => (f[1] == 0).then_some(f[0]),
        1 => (f[0] == nf - 1).then_some(f[1]),
        2 => (f[1] == nf - 1).then_some(f[0]),
        _ => (f[0] == 0).then_some(f[1]),
    }
}

pub fn side_function_index(side: usize, nf: usize, k: usize) -> [usize; 2] {
    match side {
        0 => [k, 0],
        1 => [nf - 1, k],
        2 => [k, nf - 1],
        _ => [0, k],
    }
}

/// Whether the parametric box of `c` touches `side` of the unit square.
pub fn touches_side(mesh: &HierarchicalMesh, c: Cell, side: usize) -> bool {
    let n = mesh.n_elems(c.level);
    match side {
        0 => c.index[1] == 0,
        1 => c.index[0] == n - 1,
        2 => c.index[1] == n - 1,
        _ => c.index[0] == 0,
    }
}

/// Parametric endpoints of the edge of `c` on `side`, ordered by the side parameter.
pub fn side_edge(mesh: &HierarchicalMesh, c: Cell, side: usize) -> (Point, Point) {
    let b = mesh.cell_box(c);
    match side {
        0 => ([b.lo[0], 0.0], [b.hi[0], 0.0]),
        1 => ([1.0, b.lo[1]], [1.0, b.hi[1]]),
        2 => ([b.lo[0], 1.0], [b.hi[0], 1.0]),
        _ => ([0.0, b.lo[1]], [0.0, b.hi[1]]),
    }
}

/// One hierarchical mesh per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSet {
    pub meshes: Vec<HierarchicalMesh>,
}

impl MeshSet {
    /// Root grids refined uniformly `levels` times.
    pub fn uniform(topo: &MultipatchTopology, levels: usize) -> Result<Self> {
        let mut meshes = Vec::with_capacity(topo.patches.len());
        for _ in &topo.patches {
            let mut m = HierarchicalMesh::new(topo.degree, topo.root)?;
            for _ in 0..levels {
                let cells = m.active_cells();
                m = m.refine(&cells)?;
            }
            meshes.push(m);
        }
        Ok(Self { meshes })
    }

    /// Refines marked cells per patch with admissibility closure, then
    /// mirrors refinement across interfaces until both sides agree.
    pub fn refine(
        &self,
        topo: &MultipatchTopology,
        marked: &BTreeMap<usize, BTreeSet<Cell>>,
        mu: usize,
    ) -> Result<Self> {
        let mut meshes = self.meshes.clone();
        for (&p, cells) in marked {
            let cells: Vec<Cell> = cells.iter().copied().collect();
            meshes[p] = meshes[p].refine_admissible(&cells, mu)?;
        }
        let mut out = Self { meshes };
        out.synchronize(topo, mu)?;
        Ok(out)
    }

    /// Makes the refinement pattern of the `p + 1` cell layers along every
    /// interface identical on both sides, which makes the boundary traces of
    /// the two THB spaces coincide.
    pub fn synchronize(&mut self, topo: &MultipatchTopology, mu: usize) -> Result<()> {
        let depth = topo.degree + 1;
        loop {
            let mut need: BTreeMap<usize, BTreeSet<Cell>> = BTreeMap::new();
            for (a, s, b, t, rev) in topo.interfaces() {
                let levels = self.meshes[a].num_levels().max(self.meshes[b].num_levels());
                for l in 0..levels {
                    let n = topo.root << l;
                    for i in 0..n {
                        let j = if rev { n - 1 - i } else { i };
                        for d in 0..depth.min(n) {
                            let ca = side_cell(s, l, n, i, d);
                            let cb = side_cell(t, l, n, j, d);
                            let ra = self.meshes[a].is_refined(ca);
                            let rb = self.meshes[b].is_refined(cb);
                            if ra && !rb && self.meshes[b].is_active(cb) {
                                need.entry(b).or_default().insert(cb);
                            } else if rb && !ra && self.meshes[a].is_active(ca) {
                                need.entry(a).or_default().insert(ca);
                            }
                        }
                    }
                }
            }
            if need.is_empty() {
                return Ok(());
            }
            for (p, cells) in need {
                let cells: Vec<Cell> = cells.into_iter().collect();
                self.meshes[p] = self.meshes[p].refine_admissible(&cells, mu)?;
            }
        }
    }

    pub fn total_active(&self) -> usize {
        self.meshes.iter().map(|m| m.active_cells().len()).sum()
    }
}

/// Physical diameter of the image of a parametric box, from its corners and
/// edge midpoints.
pub fn element_diameter(map: &GeometryMap, lo: Point, hi: Point) -> f64 {
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let pts = [
        map.map(lo),
        map.map([hi[0], lo[1]]),
        map.map(hi),
        map.map([lo[0], hi[1]]),
        map.map([mid[0], lo[1]]),
        map.map([hi[0], mid[1]]),
        map.map([mid[0], hi[1]]),
        map.map([lo[0], mid[1]]),
    ];
    let mut d: f64 = 0.0;
    for a in &pts {
        for b in &pts {
            d = d.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    d
}

#[derive(Debug, Clone)]
pub struct ElementData {
    pub cell: Cell,
    pub class: ElementClass,
    /// Parametric rule over the kept part of the element.
    pub rule: QuadratureRule,
    /// Physical measure of the kept part.
    pub measure: f64,
    /// Physical measure of the whole element.
    pub area: f64,
    pub h: f64,
}

impl ElementData {
    pub fn is_active(&self) -> bool {
        !self.rule.is_empty()
    }
}

fn element_data(
    map: &GeometryMap,
    mesh: &HierarchicalMesh,
    cell: Cell,
    trims: &[TrimCurve],
    depth: usize,
    q: usize,
) -> Result<ElementData> {
    let b = mesh.cell_box(cell);
    let full = gauss_rule(b.lo, b.hi, q);
    let area = physical_measure(map, &full);
    let class = classify_box_all(map, b.lo, b.hi, trims);
    let rule = match class {
        ElementClass::Interior => full,
        ElementClass::Exterior => QuadratureRule::empty(crate::quadrature::RuleKind::Cut),
        ElementClass::Cut => cut_cell_rule(map, b.lo, b.hi, trims, depth, q)?,
    };
    let measure = if class == ElementClass::Interior { area } else { physical_measure(map, &rule) };
    Ok(ElementData { cell, class, rule, measure, area, h: element_diameter(map, b.lo, b.hi) })
}

/// Basis and trimmed element data of one patch.
#[derive(Debug, Clone)]
pub struct PatchSpace {
    pub basis: ThbBasis,
    pub elements: Vec<ElementData>,
    pub trims: Vec<TrimCurve>,
    /// Functions nonzero on at least one element with kept measure.
    pub alive: Vec<bool>,
}

impl PatchSpace {
    pub fn build(
        map: &GeometryMap,
        mesh: &HierarchicalMesh,
        trims: Vec<TrimCurve>,
        depth: usize,
        q: usize,
    ) -> Result<Self> {
        let basis = ThbBasis::new(mesh);
        let elements: Vec<ElementData> =
            basis.cells().par_iter().map(|&c| element_data(map, mesh, c, &trims, depth, q)).collect::<Result<_>>()?;
        let mut alive = vec![false; basis.dimension()];
        for (e, el) in elements.iter().enumerate() {
            if el.is_active() {
                for (id, _) in basis.extraction(e) {
                    alive[*id] = true;
                }
            }
        }
        Ok(Self { basis, elements, trims, alive })
    }

    /// Keeps a point when it lies on the kept side of every trim.
    pub fn kept(&self, x: Point) -> bool {
        self.trims.iter().all(|t| t.level_set(x) >= 0.0)
    }

    /// Kept test ignoring one trim, for points on that trim's own arc.
    pub fn kept_except(&self, x: Point, own: &TrimCurve) -> bool {
        self.trims.iter().filter(|t| *t != own).all(|t| t.level_set(x) >= 0.0)
    }
}

/// Discretization of every patch of a model for one iteration.
#[derive(Debug, Clone)]
pub struct ModelSpace {
    pub patches: Vec<PatchSpace>,
    pub degree: usize,
    pub q: usize,
    pub depth: usize,
}

impl ModelSpace {
    pub fn build(model: &DefeaturedModel, meshes: &MeshSet, depth: usize) -> Result<Self> {
        let topo = &model.topology;
        if meshes.meshes.len() != topo.patches.len() {
            return Err(Error::Argument("one mesh per patch required".into()));
        }
        let q = topo.degree + 1;
        let patches = topo
            .patches
            .iter()
            .enumerate()
            .map(|(p, patch)| PatchSpace::build(&patch.map, &meshes.meshes[p], model.solve_trims(p), depth, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patches, degree: topo.degree, q, depth })
    }

    pub fn h_max(&self, patches: &[usize]) -> f64 {
        patches
            .iter()
            .flat_map(|&p| self.patches[p].elements.iter())
            .filter(|e| e.is_active())
            .map(|e| e.h)
            .fold(0.0, f64::max)
    }
}

/// Global numbering of the functions of one region, with interface
/// functions merged into single unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub region: Region,
    pub patches: Vec<usize>,
    /// `global[patch][local]`; empty for patches outside the region.
    pub global: Vec<Vec<Option<usize>>>,
    pub n: usize,
    /// Unknowns fixed by Dirichlet conditions.
    pub fixed: BTreeSet<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Partner of each function on an interface side: `(local in a, local in b)`.
pub fn interface_pairs(
    space: &ModelSpace,
    a: usize,
    s: usize,
    b: usize,
    t: usize,
    rev: bool,
) -> Result<Vec<(usize, usize)>> {
    let ba = &space.patches[a].basis;
    let bb = &space.patches[b].basis;
    let mut out = Vec::new();
    for (ia, &(l, f)) in ba.functions().iter().enumerate() {
        let nf = ba.mesh().n_funcs(l);
        let Some(k) = side_function(s, nf, f) else { continue };
        let kb = if rev { nf - 1 - k } else { k };
        match bb.function_index((l, side_function_index(t, nf, kb))) {
            Some(ib) => out.push((ia, ib)),
            None => {
                return Err(Error::TraceCompatibility(format!(
                    "function ({}, {:?}) of patch {} side {} has no partner on patch {} side {} (knot line level {}, index {})",
                    l, f, a, s, b, t, l, k
                )))
            }
        }
    }
    Ok(out)
}

impl DofMap {
    pub fn build(model: &DefeaturedModel, space: &ModelSpace, region: Region) -> Result<Self> {
        let topo = &model.topology;
        let np = topo.patches.len();
        let patches: Vec<usize> = (0..np).filter(|&p| model.region(p) == region).collect();
        let mut offset = vec![0; np + 1];
        for p in 0..np {
            let n = if patches.contains(&p) { space.patches[p].basis.dimension() } else { 0 };
            offset[p + 1] = offset[p] + n;
        }
        let mut uf = UnionFind((0..offset[np]).collect());
        for (a, s, b, t, rev) in topo.interfaces() {
            if !patches.contains(&a) || !patches.contains(&b) {
                continue;
            }
            for (ia, ib) in interface_pairs(space, a, s, b, t, rev)? {
                uf.union(offset[a] + ia, offset[b] + ib);
            }
        }
        // a merged unknown survives when any member is alive
        let mut root_alive = vec![false; offset[np]];
        for &p in &patches {
            for (i, &al) in space.patches[p].alive.iter().enumerate() {
                if al {
                    let r = uf.find(offset[p] + i);
                    root_alive[r] = true;
                }
            }
        }
        let mut number: BTreeMap<usize, usize> = BTreeMap::new();
        let mut global = vec![Vec::new(); np];
        for &p in &patches {
            let dim = space.patches[p].basis.dimension();
            let mut g = vec![None; dim];
            for (i, gi) in g.iter_mut().enumerate() {
                let r = uf.find(offset[p] + i);
                if root_alive[r] {
                    let next = number.len();
                    *gi = Some(*number.entry(r).or_insert(next));
                }
            }
            global[p] = g;
        }
        let n = number.len();
        let mut map = Self { region, patches, global, n, fixed: BTreeSet::new() };
        map.fixed = map.dirichlet_dofs(model, space);
        Ok(map)
    }

    /// Sides of a region patch carrying essential conditions.
    pub fn essential_sides(&self, model: &DefeaturedModel, patch: usize) -> Vec<usize> {
        let topo = &model.topology;
        (0..4)
            .filter(|&s| match topo.patches[patch].sides[s] {
                SideTag::Dirichlet => true,
                SideTag::Interface { patch: q, .. } => {
                    matches!(self.region, Region::Extension(_)) && model.region(q) != self.region
                }
                _ => false,
            })
            .collect()
    }

    fn dirichlet_dofs(&self, model: &DefeaturedModel, space: &ModelSpace) -> BTreeSet<usize> {
        let mut fixed = BTreeSet::new();
        for &p in &self.patches {
            let ps = &space.patches[p];
            for s in self.essential_sides(model, p) {
                for (e, &c) in ps.basis.cells().iter().enumerate() {
                    if !touches_side(ps.basis.mesh(), c, s) {
                        continue;
                    }
                    let (a, b) = side_edge(ps.basis.mesh(), c, s);
                    for t in [0.25, 0.5, 0.75] {
                        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                        for (id, jet) in ps.basis.eval_in_cell(e, x, 0) {
                            if jet[0].abs() > 1e-14 {
                                if let Some(g) = self.global[p][id] {
                                    fixed.insert(g);
                                }
                            }
                        }
                    }
                }
            }
        }
        fixed
    }

    /// Number of groups of unknowns coupled through elements with kept
    /// measure. A connected domain gives one.
    pub fn components(&self, space: &ModelSpace) -> usize {
        let mut uf = UnionFind((0..self.n).collect());
        for &p in &self.patches {
            for (e, el) in space.patches[p].elements.iter().enumerate() {
                if !el.is_active() {
                    continue;
                }
                let d = self.element_dofs(space, p, e);
                for w in d.windows(2) {
                    uf.union(w[0].1, w[1].1);
                }
            }
        }
        (0..self.n).filter(|&i| uf.find(i) == i).count()
    }

    pub fn n_free(&self) -> usize {
        self.n - self.fixed.len()
    }

    /// Unknowns with nonzero jets on element `e` of `patch`.
    pub fn element_dofs(&self, space: &ModelSpace, patch: usize, e: usize) -> Vec<(usize, usize)> {
        space.patches[patch]
            .basis
            .extraction(e)
            .iter()
            .filter_map(|(id, _)| self.global[patch][*id].map(|g| (*id, g)))
            .collect()
    }
}

/// Physical gradient and Laplacian of a field from its parametric jet.
pub fn physical_derivatives(map: &GeometryMap, xi: Point, jet: &[f64; 6]) -> (Point, f64) {
    let j = map.jacobian(xi);
    let ji = crate::geometry::inv(j);
    let g = [ji[0][0] * jet[1] + ji[1][0] * jet[2], ji[0][1] * jet[1] + ji[1][1] * jet[2]];
    let hf = map.hessian(xi);
    // parametric Hessian corrected by the map curvature
    let mut hh = [[jet[3], jet[4]], [jet[4], jet[5]]];
    for i in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                hh[a][b] -= g[i] * hf[i][a][b];
            }
        }
    }
    // Δu = tr(J⁻ᵀ H J⁻¹) = Σ_ab H_ab (J⁻¹ J⁻ᵀ)_ab
    let mut lap = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let m = ji[a][0] * ji[b][0] + ji[a][1] * ji[b][1];
            lap += hh[a][b] * m;
        }
    }
    (g, lap)
}

/// Physical gradients of basis jets and the integration factor `|det J|`.
pub fn physical_gradients(map: &GeometryMap, xi: Point, jets: &[(usize, [f64; 6])]) -> (Vec<Point>, f64) {
    let j = map.jacobian(xi);
    let ji = crate::geometry::inv(j);
    let grads = jets
        .iter()
        .map(|(_, jet)| [ji[0][0] * jet[1] + ji[1][0] * jet[2], ji[0][1] * jet[1] + ji[1][1] * jet[2]])
        .collect();
    (grads, det(j).abs())
}
