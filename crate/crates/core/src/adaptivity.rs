//! SOLVE, ESTIMATE, MARK, REFINE.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assembly::{energy_error, solve, ProblemData, Solution};
use crate::discretization::{MeshSet, ModelSpace};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimatorReport};
use crate::geometry::{DefeaturedModel, ElementClass};
use crate::hiermesh::Cell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub theta: f64,
    pub mu: usize,
    pub alpha_d: f64,
    pub alpha_n: f64,
    pub degree: usize,
    /// Stop once the estimator falls below this value.
    pub tolerance: Option<f64>,
    /// Stop after the first iteration whose `N_dof` exceeds this budget.
    pub max_dofs: Option<usize>,
    pub max_iterations: usize,
    /// Quadtree depth of cut-element quadrature.
    pub depth: usize,
    /// Insert marked features into the model; when off, `E_D` plays no part in marking.
    pub geometric_refinement: bool,
    /// Uniform refinements of the root grid before the first solve.
    pub initial_levels: usize,
    pub cg_tol: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            mu: 2,
            alpha_d: 1.0,
            alpha_n: 1.0,
            degree: 2,
            tolerance: None,
            max_dofs: Some(10_000),
            max_iterations: 40,
            depth: 6,
            geometric_refinement: true,
            initial_levels: 0,
            cg_tol: 1e-13,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if self.mu < 2 {
            return Err(Error::Config(format!("mu must be at least 2, got {}", self.mu)));
        }
        if !(self.alpha_d > 0.0) || !(self.alpha_n > 0.0) {
            return Err(Error::Config("alpha_d and alpha_n must be positive".into()));
        }
        if !(1..=5).contains(&self.degree) {
            return Err(Error::Config(format!("degree {} outside 1..=5", self.degree)));
        }
        if self.depth < 1 {
            return Err(Error::Config("quadrature depth must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::Config("cg_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Marked elements per patch and marked feature ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Marking {
    pub elements: BTreeMap<usize, BTreeSet<Cell>>,
    pub features: Vec<usize>,
}

impl Marking {
    pub fn n_elements(&self) -> usize {
        self.elements.values().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_elements() == 0 && self.features.is_empty()
    }
}

/// Maximum-strategy marking with threshold
/// `θ · max(α_N max_K E_N^K, α_D max_k E_D^k)`; ties are marked.
pub fn mark(report: &EstimatorReport, theta: f64, use_features: bool) -> Marking {
    let an = report.alpha_n;
    let ad = report.alpha_d;
    let en = report.elements.iter().map(|e| an * e.value).fold(0.0, f64::max);
    let ed = if use_features { report.features.iter().map(|f| ad * f.e_def).fold(0.0, f64::max) } else { 0.0 };
    let top = en.max(ed);
    let mut m = Marking::default();
    if !(top > 0.0) {
        return m;
    }
    let t = theta * top;
    for e in &report.elements {
        if an * e.value >= t {
            m.elements.entry(e.patch).or_default().insert(e.cell);
        }
    }
    if use_features {
        m.features = report.features.iter().filter(|f| ad * f.e_def >= t).map(|f| f.id).collect();
    }
    m
}

/// Inserts the marked features; meshes are left untouched.
pub fn refine_geometry(model: &DefeaturedModel, marked: &[usize]) -> Result<DefeaturedModel> {
    let mut out = model.clone();
    for id in marked {
        if !model.features.iter().any(|f| f.id == *id) {
            return Err(Error::Argument(format!("unknown feature id {}", id)));
        }
        if model.is_active(*id) {
            return Err(Error::Argument(format!("feature {} is already in the model", id)));
        }
        out.active.insert(*id);
    }
    Ok(out)
}

/// Contiguous numbering `1..=N_f` of the features still outside the model,
/// as `(new, original)` pairs. Models keep original ids.
pub fn feature_renumber(model: &DefeaturedModel) -> Vec<(usize, usize)> {
    let mut ids: Vec<usize> = model.inactive_features().iter().map(|f| f.id).collect();
    ids.sort_unstable();
    ids.into_iter().enumerate().map(|(k, id)| (k + 1, id)).collect()
}

/// Marked cut elements pull in the exterior elements of the same level
/// sharing a function with them.
pub fn ghost_closure(space: &ModelSpace, marked: &BTreeMap<usize, BTreeSet<Cell>>) -> BTreeMap<usize, BTreeSet<Cell>> {
    marked
        .iter()
        .map(|(&p, cells)| {
            let ps = &space.patches[p];
            let class = |c: Cell| ps.basis.cell_index(c).map(|e| ps.elements[e].class);
            let closed = ps.basis.ghost_closure(
                cells,
                |c| class(c) == Some(ElementClass::Cut),
                |c| class(c) == Some(ElementClass::Exterior),
            );
            (p, closed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_dof: usize,
    pub h_max: f64,
    pub est_total: f64,
    pub est_num: f64,
    pub est_def: f64,
    pub est_comp: f64,
    pub err_energy: Option<f64>,
    pub n_marked_elems: usize,
    pub marked_features: Vec<usize>,
    pub n_active_features: usize,
    pub n_inactive_features: usize,
}

/// Everything known at the end of one ESTIMATE step.
pub struct IterationState<'a> {
    pub model: &'a DefeaturedModel,
    pub meshes: &'a MeshSet,
    pub space: &'a ModelSpace,
    pub solution: &'a Solution,
    pub report: &'a EstimatorReport,
    pub record: &'a IterationRecord,
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub records: Vec<IterationRecord>,
    pub model: DefeaturedModel,
    pub meshes: MeshSet,
}

/// Solves, estimates and records on a fixed mesh set.
fn step(
    model: &DefeaturedModel,
    meshes: &MeshSet,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
) -> Result<(ModelSpace, Solution, EstimatorReport, Option<f64>)> {
    let space = ModelSpace::build(model, meshes, cfg.depth)?;
    let sol = solve(model, &space, data, cfg.cg_tol)?;
    let report = estimate(model, &space, &sol, data, cfg.alpha_d, cfg.alpha_n)?;
    let err = match &data.exact {
        Some(ex) => Some(energy_error(model, &space, &sol, ex)?),
        None => None,
    };
    Ok((space, sol, report, err))
}

fn record(
    model: &DefeaturedModel,
    space: &ModelSpace,
    report: &EstimatorReport,
    err: Option<f64>,
    m: &Marking,
) -> IterationRecord {
    let all: Vec<usize> = (0..model.topology.patches.len()).collect();
    IterationRecord {
        iteration: model.iteration,
        n_dof: report.n_dof,
        h_max: space.h_max(&all),
        est_total: report.e_total,
        est_num: report.e_num,
        est_def: report.e_def,
        est_comp: report.e_comp,
        err_energy: err,
        n_marked_elems: m.n_elements(),
        marked_features: m.features.clone(),
        n_active_features: model.active.len(),
        n_inactive_features: model.features.len() - model.active.len(),
    }
}

/// The adaptive loop. `observe` sees every iteration before refinement.
pub fn run_adaptive(
    model: DefeaturedModel,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    mut observe: impl FnMut(&IterationState) -> Result<()>,
) -> Result<AdaptiveRun> {
    cfg.validate()?;
    if model.topology.degree != cfg.degree {
        return Err(Error::Config(format!(
            "model degree {} differs from configured degree {}",
            model.topology.degree, cfg.degree
        )));
    }
    let mut model = model;
    let mut meshes = MeshSet::uniform(&model.topology, cfg.initial_levels)?;
    meshes.synchronize(&model.topology, cfg.mu)?;
    let mut records = Vec::new();
    loop {
        let (space, sol, report, err) = step(&model, &meshes, data, cfg)?;
        let converged = cfg.tolerance.is_some_and(|t| report.e_total <= t);
        let over_budget = cfg.max_dofs.is_some_and(|b| report.n_dof > b);
        let last = converged || over_budget || records.len() + 1 >= cfg.max_iterations;
        let marking = if last { Marking::default() } else { mark(&report, cfg.theta, cfg.geometric_refinement) };
        let rec = record(&model, &space, &report, err, &marking);
        observe(&IterationState {
            model: &model,
            meshes: &meshes,
            space: &space,
            solution: &sol,
            report: &report,
            record: &rec,
        })?;
        records.push(rec);
        if last || marking.is_empty() {
            break;
        }
        let cells = ghost_closure(&space, &marking.elements);
        meshes = meshes.refine(&model.topology, &cells, cfg.mu)?;
        model = refine_geometry(&model, &marking.features)?;
        model.iteration += 1;
    }
    Ok(AdaptiveRun { records, model, meshes })
}

/// One record per uniform level, on the model as given.
pub fn run_uniform(
    model: &DefeaturedModel,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    levels: std::ops::RangeInclusive<usize>,
    mut observe: impl FnMut(&IterationState) -> Result<()>,
) -> Result<Vec<IterationRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (i, j) in levels.enumerate() {
        let meshes = MeshSet::uniform(&model.topology, j)?;
        let mut m = model.clone();
        m.iteration = i;
        let (space, sol, report, err) = step(&m, &meshes, data, cfg)?;
        let rec = record(&m, &space, &report, err, &Marking::default());
        observe(&IterationState {
            model: &m,
            meshes: &meshes,
            space: &space,
            solution: &sol,
            report: &report,
            record: &rec,
        })?;
        out.push(rec);
    }
    Ok(out)
}
