//! Command-line front end of the defeaturing solver: config resolution, run
//! drivers and the CSV, JSON, SVG, mesh and matrix outputs.

pub mod config;
pub mod svg;

use std::fmt::Write;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use defeature::adaptivity::{refine_geometry, run_adaptive, run_uniform, IterationRecord, IterationState};
use defeature::assembly::assemble;
use defeature::discretization::{MeshSet, ModelSpace};
use defeature::Error;

use config::{ConfigFile, Mode, Resolved};
use svg::{render_svg, MeshState};

pub const CSV_HEADER: [&str; 10] = [
    "iter",
    "n_dof",
    "h_max",
    "est_total",
    "est_num",
    "est_def",
    "est_comp",
    "err_energy",
    "n_marked_elems",
    "marked_features",
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Errors while building a model or config are the user's to fix.
    pub fn from_build(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            e => CliError::Config(e.to_string()),
        }
    }

    fn from_run(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            e => CliError::Numerical(e),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {}", m),
            CliError::Numerical(e) => write!(f, "numerical abort: {}", e),
            CliError::Io(m) => write!(f, "i/o error: {}", m),
        }
    }
}

impl std::error::Error for CliError {}

fn io<E: std::fmt::Display>(what: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {}", what.display(), e))
}

/// `--out` beats `DEFEATURE_OUT`, which beats `defeature-out/<label>`.
pub fn output_dir(flag: Option<&Path>, label: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os("DEFEATURE_OUT") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => PathBuf::from("defeature-out").join(label),
    }
}

#[derive(Serialize)]
struct CsvRow {
    iter: usize,
    n_dof: usize,
    h_max: f64,
    est_total: f64,
    est_num: f64,
    est_def: f64,
    est_comp: f64,
    err_energy: Option<f64>,
    n_marked_elems: usize,
    marked_features: String,
}

impl CsvRow {
    fn new(iter: usize, r: &IterationRecord) -> Self {
        Self {
            iter,
            n_dof: r.n_dof,
            h_max: r.h_max,
            est_total: r.est_total,
            est_num: r.est_num,
            est_def: r.est_def,
            est_comp: r.est_comp,
            err_energy: r.err_energy,
            n_marked_elems: r.n_marked_elems,
            marked_features: r.marked_features.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Serialize)]
struct GridRow {
    eps: f64,
    level: usize,
    n_dof: usize,
    h_max: f64,
    est_total: f64,
    est_num: f64,
    est_def: f64,
    est_comp: f64,
    err_energy: Option<f64>,
}

/// CSV writer that flushes every row, so an aborted run leaves its partial log.
pub struct RunLog {
    w: csv::Writer<File>,
    path: PathBuf,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = File::create(path).map_err(io(path))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        w.write_record(CSV_HEADER).map_err(io(path))?;
        w.flush().map_err(io(path))?;
        Ok(Self { w, path: path.to_path_buf() })
    }

    pub fn push(&mut self, iter: usize, r: &IterationRecord) -> Result<(), CliError> {
        self.w.serialize(CsvRow::new(iter, r)).map_err(io(&self.path))?;
        self.w.flush().map_err(io(&self.path))
    }
}

/// Which optional per-iteration artefacts to write.
#[derive(Debug, Clone, Copy, Default)]
pub struct Artefacts {
    pub svg: bool,
    pub mesh: bool,
    pub matrix: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub records: Vec<IterationRecord>,
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, text).map_err(io(path))
}

fn emit_iteration(
    dir: &Path,
    k: usize,
    s: &IterationState,
    data: &defeature::assembly::ProblemData,
    a: Artefacts,
) -> Result<(), CliError> {
    write_file(&dir.join("reports").join(format!("iter_{:03}.json", k)), &s.report.to_json())?;
    if a.svg || a.mesh {
        let state = MeshState::from_space(s.space);
        if a.svg {
            write_file(&dir.join("mesh").join(format!("iter_{:03}.svg", k)), &render_svg(s.model, &state)?)?;
        }
        if a.mesh {
            for p in 0..state.patches.len() {
                write_file(&dir.join("mesh").join(format!("iter_{:03}_patch{}.txt", k, p)), &state.dump(p))?;
            }
        }
    }
    if a.matrix {
        let sys = assemble(s.model, s.space, &s.solution.defeatured.dofs, data).map_err(CliError::Numerical)?;
        write_file(&dir.join("matrix").join(format!("iter_{:03}.txt", k)), &sys.matrix.dump())?;
    }
    Ok(())
}

fn progress(quiet: bool, k: usize, r: &IterationRecord) {
    if quiet {
        return;
    }
    let err = r.err_energy.map(|e| format!("{:.4e}", e)).unwrap_or_else(|| "-".into());
    eprintln!(
        "iter {:>3}  n_dof {:>6}  est {:.4e} (num {:.3e}, def {:.3e})  err {}  marked {} {:?}",
        k, r.n_dof, r.est_total, r.est_num, r.est_def, err, r.n_marked_elems, r.marked_features
    );
}

/// Runs a resolved config and writes `run.csv`, `manifest.json` and the
/// per-iteration outputs into `dir`.
pub fn run(res: &Resolved, dir: &Path, quiet: bool) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = serde_json::to_string_pretty(&res.manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &(manifest + "\n"))?;
    let mut log = RunLog::create(&dir.join("run.csv"))?;
    let art = Artefacts { svg: res.svg, mesh: res.dump_mesh, matrix: res.dump_matrix };

    if res.mode == Mode::SweepEps {
        let level = *res.levels.end();
        let rows = grid(&res.manifest, &res.eps_values, level..=level)?;
        write_grid(&dir.join("grid.csv"), &rows)?;
        let records: Vec<IterationRecord> = rows.into_iter().map(|(_, _, r)| r).collect();
        for (k, r) in records.iter().enumerate() {
            progress(quiet, k, r);
            log.push(k, r)?;
        }
        return Ok(RunSummary { dir: dir.to_path_buf(), records });
    }

    let mut failure: Option<CliError> = None;
    let mut observe = |s: &IterationState| -> defeature::Result<()> {
        let k = s.record.iteration;
        progress(quiet, k, s.record);
        let out = log.push(k, s.record).and_then(|_| emit_iteration(dir, k, s, &res.data, art));
        out.map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            Error::Argument(msg)
        })
    };
    let result = match res.mode {
        Mode::Adaptive => run_adaptive(res.model.clone(), &res.data, &res.adaptive, &mut observe).map(|r| r.records),
        _ => run_uniform(&res.model, &res.data, &res.adaptive, res.levels.clone(), &mut observe),
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let records = result.map_err(CliError::from_run)?;
    Ok(RunSummary { dir: dir.to_path_buf(), records })
}

/// Uniform solves over the (ε, level) grid, in parallel, returned in ε-major order.
pub fn grid(
    cfg: &ConfigFile,
    eps_values: &[f64],
    levels: std::ops::RangeInclusive<usize>,
) -> Result<Vec<(f64, usize, IterationRecord)>, CliError> {
    let points: Vec<(f64, usize)> = eps_values.iter().flat_map(|&e| levels.clone().map(move |j| (e, j))).collect();
    points
        .par_iter()
        .map(|&(eps, j)| {
            let mut c = cfg.clone();
            c.eps = Some(eps);
            let res = Resolved::new(&c)?;
            let recs =
                run_uniform(&res.model, &res.data, &res.adaptive, j..=j, |_| Ok(())).map_err(CliError::from_run)?;
            Ok((eps, j, recs.into_iter().next().expect("one level")))
        })
        .collect()
}

pub fn write_grid(path: &Path, rows: &[(f64, usize, IterationRecord)]) -> Result<(), CliError> {
    let f = File::create(path).map_err(io(path))?;
    let mut w = csv::Writer::from_writer(f);
    for (eps, level, r) in rows {
        w.serialize(GridRow {
            eps: *eps,
            level: *level,
            n_dof: r.n_dof,
            h_max: r.h_max,
            est_total: r.est_total,
            est_num: r.est_num,
            est_def: r.est_def,
            est_comp: r.est_comp,
            err_energy: r.err_energy,
        })
        .map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// The `sweep` command: the full (ε, h) grid into `grid.csv`.
pub fn sweep(res: &Resolved, dir: &Path) -> Result<Vec<(f64, usize, IterationRecord)>, CliError> {
    if res.preset.and_then(|id| id.default_eps()).is_none() {
        return Err(CliError::Config("sweep needs a preset with a size parameter".into()));
    }
    if res.eps_values.is_empty() {
        return Err(CliError::Config("sweep needs eps_values".into()));
    }
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = res.manifest.clone();
    manifest.mode = Some(Mode::SweepEps);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &(text + "\n"))?;
    let rows = grid(&res.manifest, &res.eps_values, res.levels.clone())?;
    write_grid(&dir.join("grid.csv"), &rows)?;
    Ok(rows)
}

/// SVG of a uniform mesh of the given level with the given features inserted,
/// or of previously dumped per-patch meshes.
pub fn render(res: &Resolved, level: usize, activate: &[usize], dumps: &[PathBuf]) -> Result<String, CliError> {
    let model = refine_geometry(&res.model, activate).map_err(CliError::from_build)?;
    let state = if dumps.is_empty() {
        let meshes = MeshSet::uniform(&model.topology, level).map_err(CliError::from_run)?;
        let space = ModelSpace::build(&model, &meshes, res.adaptive.depth).map_err(CliError::from_run)?;
        MeshState::from_space(&space)
    } else {
        let patches = dumps
            .iter()
            .map(|p| fs::read_to_string(p).map_err(io(p)).and_then(|t| MeshState::parse_patch(&t)))
            .collect::<Result<Vec<_>, _>>()?;
        MeshState { patches }
    };
    render_svg(&model, &state)
}

pub fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    write_file(path, text)
}

/// Preset listing for the `presets` command.
pub fn presets_table() -> String {
    let mut s = String::new();
    for id in defeature::presets::PresetId::ALL {
        let eps = id.default_eps().map(|e| format!("{:e}", e)).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<15} eps {:<10} {}", id.name(), eps, id.description());
    }
    s
}
