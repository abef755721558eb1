//! Dyadic hierarchical meshes on the unit square and their truncated
//! hierarchical B-spline (THB) basis.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::splinecore::{ders_basis, KnotVector, TensorSpace};

/// Deepest level an element may reach.
pub const MAX_LEVEL: usize = 12;

/// An element of the hierarchy: level and tensor index at that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Cell {
    pub level: usize,
    pub index: [usize; 2],
}

impl Cell {
    pub fn new(level: usize, i: usize, j: usize) -> Self {
        Cell { level, index: [i, j] }
    }

    pub fn parent(&self) -> Option<Cell> {
        (self.level > 0).then(|| Cell { level: self.level - 1, index: [self.index[0] / 2, self.index[1] / 2] })
    }

    pub fn children(&self) -> [Cell; 4] {
        let [i, j] = self.index;
        let l = self.level + 1;
        [
            Cell::new(l, 2 * i, 2 * j),
            Cell::new(l, 2 * i + 1, 2 * j),
            Cell::new(l, 2 * i, 2 * j + 1),
            Cell::new(l, 2 * i + 1, 2 * j + 1),
        ]
    }

    /// The level-`k` element containing this one (`k <= level`).
    pub fn ancestor(&self, k: usize) -> Cell {
        let s = self.level - k;
        Cell { level: k, index: [self.index[0] >> s, self.index[1] >> s] }
    }
}

/// Axis-aligned parametric box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl ParamBox {
    /// True when the open boxes overlap.
    pub fn overlaps(&self, o: &ParamBox) -> bool {
        (0..2).all(|d| self.lo[d] < o.hi[d] && o.lo[d] < self.hi[d])
    }

    pub fn contains_box(&self, o: &ParamBox) -> bool {
        (0..2).all(|d| self.lo[d] <= o.lo[d] && o.hi[d] <= self.hi[d])
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalMesh {
    degree: usize,
    root: usize,
    /// `refined[l]`: level-`l` elements that were split, i.e. the level-`l`
    /// elements of `D^{l+1}`.
    refined: Vec<BTreeSet<[usize; 2]>>,
}

impl HierarchicalMesh {
    /// Single-level mesh on a uniform `root × root` grid.
    pub fn new(degree: usize, root: usize) -> Result<Self> {
        if root == 0 {
            return Err(Error::Argument("root grid must have at least one element".into()));
        }
        KnotVector::uniform(degree, root)?;
        Ok(Self { degree, root, refined: Vec::new() })
    }

    /// Builds a hierarchy from a uniform root space; `plan[l]` lists the
    /// level-`l` elements promoted to level `l+1`.
    pub fn build_hierarchy(root: &TensorSpace, plan: &[Vec<[usize; 2]>]) -> Result<Self> {
        let n = root.kv[0].num_elements();
        let p = root.degree();
        for kv in &root.kv {
            if *kv != KnotVector::uniform(p, n)? {
                return Err(Error::Argument("hierarchies need a uniform square root grid".into()));
            }
        }
        let mut mesh = Self::new(p, n)?;
        for (l, cells) in plan.iter().enumerate() {
            let cells: Vec<Cell> = cells.iter().map(|&[i, j]| Cell::new(l, i, j)).collect();
            for c in &cells {
                if !mesh.is_active(*c) && !mesh.is_refined(*c) {
                    return Err(Error::Argument(format!("element {:?} of level {} is outside D^{}", c.index, l, l)));
                }
            }
            mesh = mesh.refine(&cells)?;
        }
        Ok(mesh)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_levels(&self) -> usize {
        self.refined.len() + 1
    }

    /// Elements per direction at level `l`.
    pub fn n_elems(&self, l: usize) -> usize {
        self.root << l
    }

    /// Functions per direction at level `l`.
    pub fn n_funcs(&self, l: usize) -> usize {
        self.n_elems(l) + self.degree
    }

    pub fn space(&self, l: usize) -> TensorSpace {
        let kv = KnotVector::uniform(self.degree, self.n_elems(l)).unwrap();
        TensorSpace { kv: [kv.clone(), kv], level: l }
    }

    pub fn knot_vector(&self, l: usize) -> KnotVector {
        KnotVector::uniform(self.degree, self.n_elems(l)).unwrap()
    }

    pub fn exists(&self, c: Cell) -> bool {
        let n = self.n_elems(c.level);
        c.index[0] < n && c.index[1] < n
    }

    /// Level-`l` element lies in `D^l`.
    pub fn in_domain(&self, c: Cell) -> bool {
        if !self.exists(c) {
            return false;
        }
        match c.parent() {
            None => true,
            Some(p) => self.refined.get(p.level).is_some_and(|s| s.contains(&p.index)),
        }
    }

    pub fn is_refined(&self, c: Cell) -> bool {
        self.refined.get(c.level).is_some_and(|s| s.contains(&c.index))
    }

    pub fn is_active(&self, c: Cell) -> bool {
        self.in_domain(c) && !self.is_refined(c)
    }

    /// Level-`l` elements of `D^l`.
    pub fn domain_cells(&self, l: usize) -> Vec<Cell> {
        if l == 0 {
            let n = self.root;
            return (0..n).flat_map(|i| (0..n).map(move |j| Cell::new(0, i, j))).collect();
        }
        match self.refined.get(l - 1) {
            None => Vec::new(),
            Some(s) => {
                let mut v: Vec<Cell> = s.iter().flat_map(|&[i, j]| Cell::new(l - 1, i, j).children()).collect();
                v.sort();
                v
            }
        }
    }

    /// Active elements ordered by level then index.
    pub fn active_cells(&self) -> Vec<Cell> {
        (0..self.num_levels()).flat_map(|l| self.domain_cells(l).into_iter().filter(|c| !self.is_refined(*c))).collect()
    }

    pub fn active_count_per_level(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_levels()];
        for c in self.active_cells() {
            counts[c.level] += 1;
        }
        counts
    }

    pub fn cell_box(&self, c: Cell) -> ParamBox {
        let n = self.n_elems(c.level) as f64;
        ParamBox {
            lo: [c.index[0] as f64 / n, c.index[1] as f64 / n],
            hi: [(c.index[0] + 1) as f64 / n, (c.index[1] + 1) as f64 / n],
        }
    }

    /// Active element containing `x`; points on element boundaries go to the
    /// element on the upper side except at `x = 1`.
    pub fn locate(&self, x: [f64; 2]) -> Result<Cell> {
        for v in x {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(v));
            }
        }
        let idx = |l: usize, v: f64| ((v * self.n_elems(l) as f64) as usize).min(self.n_elems(l) - 1);
        let mut c = Cell::new(0, idx(0, x[0]), idx(0, x[1]));
        while self.is_refined(c) {
            let l = c.level + 1;
            let mut next = Cell::new(l, idx(l, x[0]), idx(l, x[1]));
            // guard against rounding moving the point out of the parent
            for d in 0..2 {
                next.index[d] = next.index[d].clamp(2 * c.index[d], 2 * c.index[d] + 1);
            }
            c = next;
        }
        Ok(c)
    }

    /// Index range of level-`l` elements in the support of function `k` (1D).
    pub fn support_range(&self, l: usize, k: usize) -> std::ops::RangeInclusive<usize> {
        k.saturating_sub(self.degree)..=k.min(self.n_elems(l) - 1)
    }

    pub fn function_support(&self, l: usize, f: [usize; 2]) -> ParamBox {
        let n = self.n_elems(l) as f64;
        let rx = self.support_range(l, f[0]);
        let ry = self.support_range(l, f[1]);
        ParamBox {
            lo: [*rx.start() as f64 / n, *ry.start() as f64 / n],
            hi: [(*rx.end() + 1) as f64 / n, (*ry.end() + 1) as f64 / n],
        }
    }

    /// Support extension of a level-`l` element within its own level.
    pub fn support_extension(&self, c: Cell) -> ParamBox {
        let n = self.n_elems(c.level);
        let p = self.degree;
        let nf = n as f64;
        let lo = |e: usize| e.saturating_sub(p) as f64 / nf;
        let hi = |e: usize| (e + p + 1).min(n) as f64 / nf;
        ParamBox { lo: [lo(c.index[0]), lo(c.index[1])], hi: [hi(c.index[0]), hi(c.index[1])] }
    }

    /// Support extension of the level-`k` ancestor of `c`.
    pub fn multilevel_support_extension(&self, c: Cell, k: usize) -> Result<ParamBox> {
        if k > c.level {
            return Err(Error::Argument(format!("level {} exceeds the element level {}", k, c.level)));
        }
        Ok(self.support_extension(c.ancestor(k)))
    }

    /// Level-`l` elements whose closure-free box meets `b` with positive area.
    pub fn cells_in_box(&self, l: usize, b: &ParamBox) -> Vec<Cell> {
        let n = self.n_elems(l);
        let nf = n as f64;
        let lo = |v: f64| ((v * nf).floor() as usize).min(n);
        let hi = |v: f64| ((v * nf).ceil() as usize).min(n);
        let mut out = Vec::new();
        for i in lo(b.lo[0])..hi(b.hi[0]) {
            for j in lo(b.lo[1])..hi(b.hi[1]) {
                out.push(Cell::new(l, i, j));
            }
        }
        out
    }

    /// Splits each listed active element into its four children; no closure.
    pub fn refine(&self, cells: &[Cell]) -> Result<Self> {
        let mut m = self.clone();
        for &c in cells {
            m.split(c)?;
        }
        Ok(m)
    }

    fn split(&mut self, c: Cell) -> Result<()> {
        if !self.is_active(c) {
            return if self.is_refined(c) {
                Ok(())
            } else {
                Err(Error::Argument(format!("element {:?} is not in the mesh", c)))
            };
        }
        if c.level + 1 > MAX_LEVEL {
            return Err(Error::DepthExceeded(c.level + 1, MAX_LEVEL));
        }
        while self.refined.len() <= c.level {
            self.refined.push(BTreeSet::new());
        }
        self.refined[c.level].insert(c.index);
        Ok(())
    }

    /// Refines the marked elements together with the admissibility closure of class `mu`.
    pub fn refine_admissible(&self, marked: &[Cell], mu: usize) -> Result<Self> {
        if mu < 2 {
            return Err(Error::Argument("admissibility class must be at least 2".into()));
        }
        let mut m = self.clone();
        for &c in marked {
            if m.is_active(c) {
                m.refine_recursive(c, mu)?;
            } else if !m.is_refined(c) {
                return Err(Error::Argument(format!("element {:?} is not active", c)));
            }
        }
        Ok(m)
    }

    fn refine_recursive(&mut self, c: Cell, mu: usize) -> Result<()> {
        if c.level + 1 >= mu {
            let k = c.level + 1 - mu;
            let ext = self.support_extension(c.ancestor(k));
            loop {
                let coarse: Vec<Cell> =
                    (0..=k).flat_map(|l| self.cells_in_box(l, &ext)).filter(|&q| self.is_active(q)).collect();
                if coarse.is_empty() {
                    break;
                }
                for q in coarse {
                    if self.is_active(q) {
                        self.refine_recursive(q, mu)?;
                    }
                }
            }
        }
        if self.is_active(c) {
            self.split(c)?;
        }
        Ok(())
    }

    /// Text dump, one `level x0 y0 x1 y1 state` line per active element.
    pub fn dump(&self, state: impl Fn(Cell) -> &'static str) -> String {
        let mut s = String::new();
        for c in self.active_cells() {
            let b = self.cell_box(c);
            s.push_str(&format!("{} {} {} {} {} {}\n", c.level, b.lo[0], b.lo[1], b.hi[0], b.hi[1], state(c)));
        }
        s
    }
}

/// A THB function: level and tensor index at that level.
pub type FuncId = (usize, [usize; 2]);

/// Truncated hierarchical B-spline basis of a mesh, stored element by element:
/// every active element keeps the coefficients of each THB function that is
/// nonzero on it with respect to the tensor B-splines of the element's level.
#[derive(Debug, Clone)]
pub struct ThbBasis {
    mesh: HierarchicalMesh,
    functions: Vec<FuncId>,
    index: HashMap<FuncId, usize>,
    cells: Vec<Cell>,
    cell_index: HashMap<Cell, usize>,
    extraction: Vec<Vec<(usize, Vec<f64>)>>,
}

/// Value and parametric derivatives `[v, d_ξ, d_η, d_ξξ, d_ξη, d_ηη]`.
pub type Jet = [f64; 6];

impl ThbBasis {
    pub fn new(mesh: &HierarchicalMesh) -> Self {
        let p = mesh.degree();
        let nl = mesh.num_levels();

        let mut functions = Vec::new();
        for l in 0..nl {
            let mut cand = BTreeSet::new();
            for c in mesh.domain_cells(l) {
                for a in 0..=p {
                    for b in 0..=p {
                        cand.insert([c.index[0] + a, c.index[1] + b]);
                    }
                }
            }
            for f in cand {
                let cells = support_cells(mesh, l, f);
                if cells.iter().all(|&c| mesh.in_domain(c)) && !cells.iter().all(|&c| mesh.is_refined(c)) {
                    functions.push((l, f));
                }
            }
        }
        let index: HashMap<FuncId, usize> = functions.iter().enumerate().map(|(i, f)| (*f, i)).collect();

        // 1D two-scale relations between consecutive levels
        let two_scale: Vec<Vec<Vec<(usize, f64)>>> = (0..nl.saturating_sub(1))
            .map(|l| mesh.knot_vector(l).two_scale(&mesh.knot_vector(l + 1)).unwrap())
            .collect();
        let local_matrix = |l: usize, e: usize, child: usize| -> Vec<f64> {
            let mut m = vec![0.0; (p + 1) * (p + 1)];
            for a in 0..=p {
                for &(fi, c) in &two_scale[l][e + a] {
                    if fi >= child && fi <= child + p {
                        m[(fi - child) * (p + 1) + a] = c;
                    }
                }
            }
            m
        };

        let mut in_dom_cache: HashMap<FuncId, bool> = HashMap::new();
        let cells = mesh.active_cells();
        let np = (p + 1) * (p + 1);
        let mut extraction = Vec::with_capacity(cells.len());
        for &cell in &cells {
            let mut state: Vec<(usize, Vec<f64>)> = Vec::new();
            for m in 0..=cell.level {
                let anc = cell.ancestor(m);
                if m > 0 {
                    let prev = cell.ancestor(m - 1);
                    let mx = local_matrix(m - 1, prev.index[0], anc.index[0]);
                    let my = local_matrix(m - 1, prev.index[1], anc.index[1]);
                    let mut next_state = Vec::with_capacity(state.len());
                    for (id, c) in state {
                        let mut tmp = vec![0.0; np];
                        // apply x then y
                        for b in 0..=p {
                            for a2 in 0..=p {
                                let mut s = 0.0;
                                for a in 0..=p {
                                    s += mx[a2 * (p + 1) + a] * c[a + (p + 1) * b];
                                }
                                tmp[a2 + (p + 1) * b] = s;
                            }
                        }
                        let mut out = vec![0.0; np];
                        for b2 in 0..=p {
                            for a2 in 0..=p {
                                let f = [anc.index[0] + a2, anc.index[1] + b2];
                                let covered = *in_dom_cache
                                    .entry((m, f))
                                    .or_insert_with(|| support_cells(mesh, m, f).iter().all(|&q| mesh.in_domain(q)));
                                if covered {
                                    continue;
                                }
                                let mut s = 0.0;
                                for b in 0..=p {
                                    s += my[b2 * (p + 1) + b] * tmp[a2 + (p + 1) * b];
                                }
                                out[a2 + (p + 1) * b2] = s;
                            }
                        }
                        if out.iter().any(|&v| v != 0.0) {
                            next_state.push((id, out));
                        }
                    }
                    state = next_state;
                }
                for b in 0..=p {
                    for a in 0..=p {
                        if let Some(&id) = index.get(&(m, [anc.index[0] + a, anc.index[1] + b])) {
                            let mut c = vec![0.0; np];
                            c[a + (p + 1) * b] = 1.0;
                            state.push((id, c));
                        }
                    }
                }
            }
            state.sort_by_key(|e| e.0);
            extraction.push(state);
        }
        let cell_index = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Self { mesh: mesh.clone(), functions, index, cells, cell_index, extraction }
    }

    pub fn mesh(&self) -> &HierarchicalMesh {
        &self.mesh
    }

    pub fn dimension(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[FuncId] {
        &self.functions
    }

    pub fn function_index(&self, f: FuncId) -> Option<usize> {
        self.index.get(&f).copied()
    }

    /// Active elements, in the order used by `extraction`.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell_index(&self, c: Cell) -> Option<usize> {
        self.cell_index.get(&c).copied()
    }

    /// THB functions nonzero on element `e` with their local coefficients.
    pub fn extraction(&self, e: usize) -> &[(usize, Vec<f64>)] {
        &self.extraction[e]
    }

    /// Local tensor B-splines of the element's level at `x`, as jets
    /// ordered `a + (p+1) b`.
    pub fn local_jets(&self, cell: Cell, x: [f64; 2], nder: usize) -> Vec<Jet> {
        let p = self.mesh.degree();
        let kv = self.mesh.knot_vector(cell.level);
        let nd = nder.min(p).min(2);
        let bx = ders_basis(p, kv.knots(), cell.index[0] + p, x[0], nd);
        let by = ders_basis(p, kv.knots(), cell.index[1] + p, x[1], nd);
        let d = |v: &Vec<Vec<f64>>, k: usize, a: usize| if k < v.len() { v[k][a] } else { 0.0 };
        let mut out = Vec::with_capacity((p + 1) * (p + 1));
        for b in 0..=p {
            for a in 0..=p {
                out.push([
                    bx[0][a] * by[0][b],
                    d(&bx, 1, a) * by[0][b],
                    bx[0][a] * d(&by, 1, b),
                    d(&bx, 2, a) * by[0][b],
                    d(&bx, 1, a) * d(&by, 1, b),
                    bx[0][a] * d(&by, 2, b),
                ]);
            }
        }
        out
    }

    /// Jets of every THB function nonzero on element `e` at parametric `x`.
    pub fn eval_in_cell(&self, e: usize, x: [f64; 2], nder: usize) -> Vec<(usize, Jet)> {
        let local = self.local_jets(self.cells[e], x, nder);
        self.extraction[e]
            .iter()
            .map(|(id, c)| {
                let mut j = [0.0; 6];
                for (ck, lk) in c.iter().zip(&local) {
                    if *ck != 0.0 {
                        for t in 0..6 {
                            j[t] += ck * lk[t];
                        }
                    }
                }
                (*id, j)
            })
            .collect()
    }

    /// THB functions nonzero at `x` with their jets.
    pub fn eval(&self, x: [f64; 2], nder: usize) -> Result<Vec<(usize, Jet)>> {
        let c = self.mesh.locate(x)?;
        Ok(self.eval_in_cell(self.cell_index[&c], x, nder))
    }

    /// Checks 𝒯-admissibility of class `mu`: on every active element of level
    /// ℓ all nonzero THB functions have level ≥ ℓ − μ + 1. Returns the first
    /// violating element otherwise.
    pub fn is_admissible(&self, mu: usize) -> std::result::Result<(), Cell> {
        for (e, c) in self.cells.iter().enumerate() {
            let lo = self.extraction[e].iter().map(|(id, _)| self.functions[*id].0).min();
            if let Some(lo) = lo {
                if lo + mu < c.level + 1 {
                    return Err(*c);
                }
            }
        }
        Ok(())
    }

    /// Adds to `marked` the same-level exterior elements sharing a THB
    /// function with a marked cut element.
    pub fn ghost_closure(
        &self,
        marked: &BTreeSet<Cell>,
        is_cut: impl Fn(Cell) -> bool,
        is_exterior: impl Fn(Cell) -> bool,
    ) -> BTreeSet<Cell> {
        let mut out = marked.clone();
        for &k in marked {
            if !is_cut(k) {
                continue;
            }
            let Some(ek) = self.cell_index(k) else { continue };
            let fk: BTreeSet<usize> = self.extraction[ek].iter().map(|e| e.0).collect();
            let ext = self.mesh.support_extension(k);
            for q in self.mesh.cells_in_box(k.level, &ext) {
                if q == k || !self.mesh.is_active(q) || !is_exterior(q) {
                    continue;
                }
                let eq = self.cell_index[&q];
                if self.extraction[eq].iter().any(|e| fk.contains(&e.0)) {
                    out.insert(q);
                }
            }
        }
        out
    }
}

fn support_cells(mesh: &HierarchicalMesh, l: usize, f: [usize; 2]) -> Vec<Cell> {
    let mut v = Vec::new();
    for i in mesh.support_range(l, f[0]) {
        for j in mesh.support_range(l, f[1]) {
            v.push(Cell::new(l, i, j));
        }
    }
    v
}
