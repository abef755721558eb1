//! Run configuration: a single JSON document whose keys are all optional.
//! Command-line flags override the file, the file overrides preset defaults.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use defeature::adaptivity::AdaptiveConfig;
use defeature::assembly::ProblemData;
use defeature::geometry::{
    constant, constant_flux, DefeaturedModel, Feature, FeatureKind, GeometryMap, MultipatchTopology, PatchRole, Point,
    Sector, SideTag,
};
use defeature::presets::{self, PresetId};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Adaptive,
    Uniform,
    SweepEps,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "uniform" => Ok(Mode::Uniform),
            "sweep-eps" => Ok(Mode::SweepEps),
            _ => Err(format!("unknown mode '{}' (adaptive, uniform, sweep-eps)", s)),
        }
    }
}

/// Every key of a config file. A written manifest has all of them set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub mode: Option<Mode>,
    /// Inclusive level range `a..b`.
    pub levels: Option<String>,
    pub eps_values: Option<Vec<f64>>,
    pub p: Option<usize>,
    pub theta: Option<f64>,
    pub mu: Option<usize>,
    pub alpha_d: Option<f64>,
    pub alpha_n: Option<f64>,
    /// DOF budget; 0 disables it.
    pub budget: Option<usize>,
    pub depth: Option<usize>,
    pub max_iterations: Option<usize>,
    /// Estimator tolerance; 0 disables it.
    pub tolerance: Option<f64>,
    pub geometric_refinement: Option<bool>,
    pub initial_levels: Option<usize>,
    pub cg_tol: Option<f64>,
    pub svg: Option<bool>,
    pub dump_mesh: Option<bool>,
    pub dump_matrix: Option<bool>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
    }

    /// Keys set in `o` replace those of `self`.
    pub fn overlay(&mut self, o: &ConfigFile) {
        overlay!(
            self,
            o,
            preset,
            geometry,
            eps,
            mode,
            levels,
            eps_values,
            p,
            theta,
            mu,
            alpha_d,
            alpha_n,
            budget,
            depth,
            max_iterations,
            tolerance,
            geometric_refinement,
            initial_levels,
            cg_tol,
            svg,
            dump_mesh,
            dump_matrix
        );
    }
}

pub fn parse_levels(s: &str) -> Result<RangeInclusive<usize>, CliError> {
    let bad = || CliError::Config(format!("levels must look like '0..5', got '{}'", s));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    AffineRect { lo: Point, hi: Point },
    BilinearQuad { corners: [Point; 4] },
    AnnulusSector { center: Point, r_in: f64, r_out: f64, theta0: f64, theta1: f64 },
    DiscCoreBlend { a: Point, b: Point, center: Point, radius: f64, theta0: f64, theta1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideSpec {
    Dirichlet,
    Neumann,
    Tilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleSpec {
    #[default]
    Base,
    Extension(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub map: MapSpec,
    /// Tags of sides η=0, ξ=1, η=1, ξ=0; sides shared with another patch are glued.
    pub sides: [SideSpec; 4],
    #[serde(default)]
    pub role: RoleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSpec {
    Negative,
    Positive,
}

fn two_pi() -> f64 {
    2.0 * PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub id: usize,
    pub kind: KindSpec,
    pub patch: usize,
    pub center: Point,
    pub radius: f64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default = "two_pi")]
    pub theta1: f64,
    #[serde(default)]
    pub g: f64,
    #[serde(default)]
    pub g0: f64,
    #[serde(default)]
    pub g_tilde: f64,
}

/// Constant problem data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub f: f64,
    #[serde(default)]
    pub g_dirichlet: f64,
    #[serde(default)]
    pub g_neumann: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Root grid is `root × root` on every patch.
    pub root: usize,
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub data: DataSpec,
}

impl GeometrySpec {
    pub fn build(&self, degree: usize) -> defeature::Result<(DefeaturedModel, ProblemData)> {
        let specs = self
            .patches
            .iter()
            .map(|p| {
                let map = match p.map {
                    MapSpec::AffineRect { lo, hi } => GeometryMap::AffineRect { lo, hi },
                    MapSpec::BilinearQuad { corners } => GeometryMap::BilinearQuad { corners },
                    MapSpec::AnnulusSector { center, r_in, r_out, theta0, theta1 } => {
                        GeometryMap::AnnulusSector { center, r_in, r_out, theta0, theta1 }
                    }
                    MapSpec::DiscCoreBlend { a, b, center, radius, theta0, theta1 } => {
                        GeometryMap::DiscCoreBlend { a, b, center, radius, theta0, theta1 }
                    }
                };
                let sides = p.sides.map(|s| match s {
                    SideSpec::Dirichlet => SideTag::Dirichlet,
                    SideSpec::Neumann => SideTag::Neumann,
                    SideSpec::Tilde => SideTag::Tilde,
                });
                let role = match p.role {
                    RoleSpec::Base => PatchRole::Base,
                    RoleSpec::Extension(k) => PatchRole::Extension(k),
                };
                (map, sides, role)
            })
            .collect();
        let topo = MultipatchTopology::new(specs, degree, self.root)?;
        let features = self
            .features
            .iter()
            .map(|f| Feature {
                id: f.id,
                kind: match f.kind {
                    KindSpec::Negative => FeatureKind::Negative,
                    KindSpec::Positive => FeatureKind::Positive,
                },
                patch: f.patch,
                sector: Sector { center: f.center, radius: f.radius, theta0: f.theta0, theta1: f.theta1 },
                g: constant_flux(f.g),
                g0: constant_flux(f.g0),
                g_tilde: constant_flux(f.g_tilde),
            })
            .collect();
        let model = DefeaturedModel::build(topo, features, BTreeSet::new())?;
        let d = &self.data;
        let data = ProblemData {
            f: constant(d.f),
            g_dirichlet: constant(d.g_dirichlet),
            g_neumann: constant_flux(d.g_neumann),
            exact: None,
        };
        Ok((model, data))
    }
}

/// A fully resolved run.
#[derive(Clone)]
pub struct Resolved {
    pub label: String,
    pub preset: Option<PresetId>,
    pub eps: Option<f64>,
    pub model: DefeaturedModel,
    pub data: ProblemData,
    pub adaptive: AdaptiveConfig,
    pub mode: Mode,
    pub levels: RangeInclusive<usize>,
    pub eps_values: Vec<f64>,
    pub svg: bool,
    pub dump_mesh: bool,
    pub dump_matrix: bool,
    /// The config echoed back with every key set.
    pub manifest: ConfigFile,
}

impl std::fmt::Debug for Resolved {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolved").field("manifest", &self.manifest).finish()
    }
}

fn default_eps_values(id: PresetId) -> Vec<f64> {
    match id {
        PresetId::DiscHole => vec![0.08, 0.04, 0.02, 0.01],
        PresetId::HalfdiscHole => vec![0.04, 0.02, 0.01, 0.005],
        PresetId::LshapeFillet => vec![0.08, 0.04, 0.02, 0.01],
        _ => vec![],
    }
}

/// Builds the model of a config, rebuilding per ε for sweeps.
pub fn build_model(
    cfg: &ConfigFile,
    eps: Option<f64>,
) -> Result<(Option<PresetId>, DefeaturedModel, ProblemData, AdaptiveConfig), CliError> {
    match (&cfg.preset, &cfg.geometry) {
        (Some(_), Some(_)) => Err(CliError::Config("give either a preset or a geometry, not both".into())),
        (None, None) => Err(CliError::Config("no preset or geometry given".into())),
        (Some(name), None) => {
            let id = PresetId::parse(name).map_err(CliError::from_build)?;
            let pr = presets::build(id, eps, cfg.p).map_err(CliError::from_build)?;
            Ok((Some(id), pr.model, pr.data, pr.config))
        }
        (None, Some(g)) => {
            if eps.is_some() {
                return Err(CliError::Config("eps only applies to presets".into()));
            }
            let mut ac = AdaptiveConfig::default();
            if let Some(p) = cfg.p {
                ac.degree = p;
            }
            let (model, data) = g.build(ac.degree).map_err(CliError::from_build)?;
            Ok((None, model, data, ac))
        }
    }
}

impl Resolved {
    pub fn new(cfg: &ConfigFile) -> Result<Self, CliError> {
        let (preset, model, data, mut ac) = build_model(cfg, cfg.eps)?;
        let eps = match preset {
            Some(id) => cfg.eps.or(id.default_eps()),
            None => None,
        };
        if let Some(v) = cfg.theta {
            ac.theta = v;
        }
        if let Some(v) = cfg.mu {
            ac.mu = v;
        }
        if let Some(v) = cfg.alpha_d {
            ac.alpha_d = v;
        }
        if let Some(v) = cfg.alpha_n {
            ac.alpha_n = v;
        }
        if let Some(v) = cfg.budget {
            ac.max_dofs = (v > 0).then_some(v);
        }
        if let Some(v) = cfg.depth {
            ac.depth = v;
        }
        if let Some(v) = cfg.max_iterations {
            ac.max_iterations = v;
        }
        if let Some(v) = cfg.tolerance {
            ac.tolerance = (v > 0.0).then_some(v);
        }
        if let Some(v) = cfg.geometric_refinement {
            ac.geometric_refinement = v;
        }
        if let Some(v) = cfg.initial_levels {
            ac.initial_levels = v;
        }
        if let Some(v) = cfg.cg_tol {
            ac.cg_tol = v;
        }
        ac.validate().map_err(CliError::from_build)?;
        let mode = cfg.mode.unwrap_or(Mode::Adaptive);
        let levels_str = cfg.levels.clone().unwrap_or_else(|| "0..4".into());
        let levels = parse_levels(&levels_str)?;
        let eps_values = match &cfg.eps_values {
            Some(v) => v.clone(),
            None => preset.map(default_eps_values).unwrap_or_default(),
        };
        if mode == Mode::SweepEps {
            if preset.and_then(|id| id.default_eps()).is_none() {
                return Err(CliError::Config("sweep-eps needs a preset with a size parameter".into()));
            }
            if eps_values.is_empty() {
                return Err(CliError::Config("sweep-eps needs eps_values".into()));
            }
        }
        let manifest = ConfigFile {
            preset: cfg.preset.clone(),
            geometry: cfg.geometry.clone(),
            eps,
            mode: Some(mode),
            levels: Some(format!("{}..{}", levels.start(), levels.end())),
            eps_values: Some(eps_values.clone()),
            p: Some(ac.degree),
            theta: Some(ac.theta),
            mu: Some(ac.mu),
            alpha_d: Some(ac.alpha_d),
            alpha_n: Some(ac.alpha_n),
            budget: Some(ac.max_dofs.unwrap_or(0)),
            depth: Some(ac.depth),
            max_iterations: Some(ac.max_iterations),
            tolerance: Some(ac.tolerance.unwrap_or(0.0)),
            geometric_refinement: Some(ac.geometric_refinement),
            initial_levels: Some(ac.initial_levels),
            cg_tol: Some(ac.cg_tol),
            svg: Some(cfg.svg.unwrap_or(false)),
            dump_mesh: Some(cfg.dump_mesh.unwrap_or(false)),
            dump_matrix: Some(cfg.dump_matrix.unwrap_or(false)),
        };
        let label = match preset {
            Some(id) => id.name().to_string(),
            None => "custom".to_string(),
        };
        Ok(Self {
            label,
            preset,
            eps,
            model,
            data,
            adaptive: ac,
            mode,
            levels,
            eps_values,
            svg: cfg.svg.unwrap_or(false),
            dump_mesh: cfg.dump_mesh.unwrap_or(false),
            dump_matrix: cfg.dump_matrix.unwrap_or(false),
            manifest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset(name: &str) -> ConfigFile {
        ConfigFile { preset: Some(name.into()), ..Default::default() }
    }

    #[test]
    fn levels_parse() {
        assert_eq!(parse_levels("0..5").unwrap(), 0..=5);
        assert_eq!(parse_levels(" 2 .. 2").unwrap(), 2..=2);
        for bad in ["5..0", "0-5", "a..b", ""] {
            assert!(parse_levels(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn precedence_is_flags_file_preset() {
        let r = Resolved::new(&preset("two-features")).unwrap();
        assert_eq!(r.adaptive.alpha_d, 4.0);
        let mut file = preset("two-features");
        file.alpha_d = Some(2.0);
        file.theta = Some(0.3);
        let flags = ConfigFile { theta: Some(0.7), ..Default::default() };
        file.overlay(&flags);
        let r = Resolved::new(&file).unwrap();
        assert_eq!((r.adaptive.alpha_d, r.adaptive.theta), (2.0, 0.7));
    }

    #[test]
    fn manifest_round_trips() {
        let mut c = preset("disc-hole");
        c.eps = Some(0.02);
        c.mode = Some(Mode::Uniform);
        c.budget = Some(0);
        let r = Resolved::new(&c).unwrap();
        assert_eq!(r.adaptive.max_dofs, None);
        let text = serde_json::to_string(&r.manifest).unwrap();
        let back: ConfigFile = serde_json::from_str(&text).unwrap();
        let again = Resolved::new(&back).unwrap();
        assert_eq!(again.manifest, r.manifest);
        assert_eq!(again.adaptive, r.adaptive);
    }

    #[test]
    fn config_errors() {
        assert!(Resolved::new(&ConfigFile::default()).is_err());
        assert!(Resolved::new(&preset("nope")).is_err());
        let mut c = preset("disc-hole");
        c.theta = Some(2.0);
        assert!(Resolved::new(&c).is_err());
        let mut c = preset("manufactured");
        c.mode = Some(Mode::SweepEps);
        assert!(Resolved::new(&c).is_err());
        assert!(serde_json::from_str::<ConfigFile>(r#"{"preset": "disc-hole", "bogus": 1}"#).is_err());
    }

    #[test]
    fn user_geometry_builds() {
        let text = r#"{
            "geometry": {
                "root": 2,
                "patches": [
                    {"map": {"kind": "affine_rect", "lo": [0, 0], "hi": [1, 1]}, "sides": ["dirichlet", "neumann", "neumann", "dirichlet"]},
                    {"map": {"kind": "affine_rect", "lo": [1, 0], "hi": [2, 1]}, "sides": ["neumann", "neumann", "neumann", "neumann"]}
                ],
                "features": [{"id": 1, "kind": "negative", "patch": 1, "center": [1.5, 0.5], "radius": 0.1}],
                "data": {"f": 1.0}
            }
        }"#;
        let c: ConfigFile = serde_json::from_str(text).unwrap();
        let r = Resolved::new(&c).unwrap();
        assert_eq!(r.model.topology.patches.len(), 2);
        assert_eq!(r.model.topology.interfaces().len(), 1);
        assert_eq!(r.model.features.len(), 1);
        assert_eq!(r.label, "custom");
        let mut with_eps = c.clone();
        with_eps.eps = Some(0.1);
        assert!(Resolved::new(&with_eps).is_err());
    }
}
