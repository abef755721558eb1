//! Embedded experiment geometries and data.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptivity::AdaptiveConfig;
use crate::assembly::{ExactSolution, ProblemData};
use crate::error::{Error, Result};
use crate::geometry::{
    constant, constant_flux, DefeaturedModel, Feature, FeatureKind, FluxField, GeometryMap, MultipatchTopology,
    PatchRole, Point, Sector, SideTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetId {
    DiscHole,
    LshapeFillet,
    HalfdiscHole,
    TwoFeatures,
    ManyHoles,
    Manufactured,
}

impl PresetId {
    pub const ALL: [PresetId; 6] = [
        PresetId::DiscHole,
        PresetId::LshapeFillet,
        PresetId::HalfdiscHole,
        PresetId::TwoFeatures,
        PresetId::ManyHoles,
        PresetId::Manufactured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::DiscHole => "disc-hole",
            PresetId::LshapeFillet => "lshape-fillet",
            PresetId::HalfdiscHole => "halfdisc-hole",
            PresetId::TwoFeatures => "two-features",
            PresetId::ManyHoles => "many-holes",
            PresetId::Manufactured => "manufactured",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::Config(format!("unknown preset '{}'", s)))
    }

    /// Feature size used when none is given.
    pub fn default_eps(self) -> Option<f64> {
        match self {
            PresetId::DiscHole | PresetId::HalfdiscHole => Some(5e-3),
            PresetId::LshapeFillet => Some(0.1),
            _ => None,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PresetId::DiscHole => "disc of radius 1/2 with a centred circular hole of radius eps, 5 patches",
            PresetId::LshapeFillet => "L-shaped domain with a fillet of size eps at the reentrant corner",
            PresetId::HalfdiscHole => "half disc with a half-circular hole on its flat side, 4 patches",
            PresetId::TwoFeatures => "unit square with a tiny hole near the steep corner and a large one far from it",
            PresetId::ManyHoles => "unit square with 27 circular holes",
            PresetId::Manufactured => "unit square, u = sin(pi x) sin(pi y)",
        }
    }
}

pub struct Preset {
    pub id: PresetId,
    pub eps: Option<f64>,
    pub model: DefeaturedModel,
    pub data: ProblemData,
    pub config: AdaptiveConfig,
    /// Area of the fully defeatured domain.
    pub defeatured_area: f64,
}

impl std::fmt::Debug for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preset").field("id", &self.id).field("eps", &self.eps).field("model", &self.model).finish()
    }
}

type Spec = (GeometryMap, [SideTag; 4], PatchRole);

const D: SideTag = SideTag::Dirichlet;
const N: SideTag = SideTag::Neumann;

fn zero_feature(id: usize, kind: FeatureKind, patch: usize, sector: Sector) -> Feature {
    Feature { id, kind, patch, sector, g: constant_flux(0.0), g0: constant_flux(0.0), g_tilde: constant_flux(0.0) }
}

fn check_eps(eps: f64, max: f64) -> Result<f64> {
    if eps > 0.0 && eps < max {
        Ok(eps)
    } else {
        Err(Error::Config(format!("eps must lie in (0, {}), got {}", max, eps)))
    }
}

pub fn build(id: PresetId, eps: Option<f64>, degree: Option<usize>) -> Result<Preset> {
    let mut config = AdaptiveConfig::default();
    if let Some(p) = degree {
        config.degree = p;
    }
    if id == PresetId::ManyHoles {
        config.degree = degree.unwrap_or(3);
        config.theta = 0.3;
        config.alpha_d = 4.0;
        config.mu = 3;
    }
    if id == PresetId::TwoFeatures {
        config.alpha_d = 4.0;
        config.max_dofs = Some(500);
    }
    if id == PresetId::LshapeFillet {
        // the fillet cusps drive cut slivers towards the depth cap past ~7k dofs
        config.max_dofs = Some(5000);
    }
    config.validate()?;
    let p = config.degree;
    let eps = match (id.default_eps(), eps) {
        (None, Some(_)) => return Err(Error::Config(format!("preset {} has no size parameter", id.name()))),
        (None, None) => None,
        (Some(d), e) => Some(e.unwrap_or(d)),
    };
    let (model, data, area) = match id {
        PresetId::DiscHole => disc_hole(check_eps(eps.unwrap(), 0.25)?, p)?,
        PresetId::HalfdiscHole => halfdisc_hole(check_eps(eps.unwrap(), 0.125)?, p)?,
        PresetId::LshapeFillet => lshape_fillet(check_eps(eps.unwrap(), 0.5)?, p)?,
        PresetId::TwoFeatures => two_features(p)?,
        PresetId::ManyHoles => many_holes(p)?,
        PresetId::Manufactured => manufactured(p)?,
    };
    Ok(Preset { id, eps, model, data, config, defeatured_area: area })
}

/// Radial solution of `−Δu = −1` vanishing on `r = 1/2` with zero flux on `r = eps`.
fn disc_exact(eps: f64, center: Point) -> ExactSolution {
    let c = 0.5 * eps * eps;
    ExactSolution {
        u: Arc::new(move |x: Point| {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let r2 = dx * dx + dy * dy;
            -c * (2.0 * r2.sqrt()).ln() + 0.25 * r2 - 1.0 / 16.0
        }),
        grad: Arc::new(move |x: Point| {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let r2 = dx * dx + dy * dy;
            let k = -c / r2 + 0.5;
            [k * dx, k * dy]
        }),
    }
}

/// Central square and four blended ring patches.
fn disc_patches() -> Vec<Spec> {
    let q = 0.25;
    let r = 0.5;
    let o = [0.0, 0.0];
    let corners = [[-q, -q], [q, -q], [q, q], [-q, q]];
    let mut specs = vec![(GeometryMap::AffineRect { lo: [-q, -q], hi: [q, q] }, [N; 4], PatchRole::Base)];
    for k in 0..4 {
        let th0 = -0.75 * PI + 0.5 * PI * k as f64;
        specs.push((
            GeometryMap::DiscCoreBlend {
                a: corners[k],
                b: corners[(k + 1) % 4],
                center: o,
                radius: r,
                theta0: th0,
                theta1: th0 + 0.5 * PI,
            },
            [N, N, D, N],
            PatchRole::Base,
        ));
    }
    specs
}

fn disc_hole(eps: f64, p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let topo = MultipatchTopology::new(disc_patches(), p, 1)?;
    let hole = zero_feature(1, FeatureKind::Negative, 0, Sector::disc([0.0, 0.0], eps));
    let model = DefeaturedModel::build(topo, vec![hole], BTreeSet::new())?;
    let data = ProblemData {
        f: constant(-1.0),
        g_dirichlet: constant(0.0),
        g_neumann: constant_flux(0.0),
        exact: Some(disc_exact(eps, [0.0, 0.0])),
    };
    Ok((model, data, PI / 4.0))
}

fn halfdisc_hole(eps: f64, p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let r = 0.5;
    let o = [0.0, 0.0];
    let (a, b, c, d) = ([-0.125, -0.25], [-0.25, 0.0], [0.25, 0.0], [0.125, -0.25]);
    let specs = vec![
        (GeometryMap::BilinearQuad { corners: [a, b, c, d] }, [N; 4], PatchRole::Base),
        (
            GeometryMap::DiscCoreBlend { a: b, b: a, center: o, radius: r, theta0: PI, theta1: 4.0 * PI / 3.0 },
            [N, N, D, N],
            PatchRole::Base,
        ),
        (
            GeometryMap::DiscCoreBlend {
                a,
                b: d,
                center: o,
                radius: r,
                theta0: 4.0 * PI / 3.0,
                theta1: 5.0 * PI / 3.0,
            },
            [N, N, D, N],
            PatchRole::Base,
        ),
        (
            GeometryMap::DiscCoreBlend { a: d, b: c, center: o, radius: r, theta0: 5.0 * PI / 3.0, theta1: 2.0 * PI },
            [N, N, D, N],
            PatchRole::Base,
        ),
    ];
    let topo = MultipatchTopology::new(specs, p, 2)?;
    let hole =
        zero_feature(1, FeatureKind::Negative, 0, Sector { center: o, radius: eps, theta0: PI, theta1: 2.0 * PI });
    let model = DefeaturedModel::build(topo, vec![hole], BTreeSet::new())?;
    let data = ProblemData {
        f: constant(-1.0),
        g_dirichlet: constant(0.0),
        g_neumann: constant_flux(0.0),
        exact: Some(disc_exact(eps, o)),
    };
    Ok((model, data, PI / 8.0))
}

fn lshape_fillet(eps: f64, p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let m = 0.5 + eps;
    let specs = vec![
        (GeometryMap::AffineRect { lo: [0.0, m], hi: [0.5, 1.0] }, [N, N, N, D], PatchRole::Base),
        (
            GeometryMap::BilinearQuad { corners: [[0.0, 0.0], [0.5, 0.5], [0.5, m], [0.0, m]] },
            [N, N, N, D],
            PatchRole::Base,
        ),
        (
            GeometryMap::BilinearQuad { corners: [[0.0, 0.0], [m, 0.0], [m, 0.5], [0.5, 0.5]] },
            [D, N, N, N],
            PatchRole::Base,
        ),
        (GeometryMap::AffineRect { lo: [m, 0.0], hi: [1.0, 0.5] }, [D, N, N, N], PatchRole::Base),
        (
            GeometryMap::AffineRect { lo: [0.5, 0.5], hi: [m, m] },
            [N, SideTag::Tilde, SideTag::Tilde, N],
            PatchRole::Extension(1),
        ),
    ];
    let topo = MultipatchTopology::new(specs, p, 1)?;
    let w = 2.0 * PI;
    let u = move |x: Point| (w * x[0]).sin() * (w * x[1]).sin();
    let grad = move |x: Point| [w * (w * x[0]).cos() * (w * x[1]).sin(), w * (w * x[0]).sin() * (w * x[1]).cos()];
    let flux: FluxField = Arc::new(move |x: Point, n: Point| {
        let g = grad(x);
        g[0] * n[0] + g[1] * n[1]
    });
    let fillet = Feature {
        id: 1,
        kind: FeatureKind::Positive,
        patch: 4,
        sector: Sector { center: [m, m], radius: eps, theta0: PI, theta1: 1.5 * PI },
        g: flux.clone(),
        g0: flux.clone(),
        g_tilde: constant_flux(0.0),
    };
    let model = DefeaturedModel::build(topo, vec![fillet], BTreeSet::new())?;
    let data = ProblemData {
        f: Arc::new(move |x: Point| 2.0 * w * w * u(x)),
        g_dirichlet: constant(0.0),
        g_neumann: flux,
        exact: Some(ExactSolution { u: Arc::new(u), grad: Arc::new(grad) }),
    };
    Ok((model, data, 0.75))
}

/// `f`, `g_D` and `g` making `e^{−8(x+y)}` the defeatured solution on the unit square.
fn steep_corner_data() -> ProblemData {
    let e = |x: Point| (-8.0 * (x[0] + x[1])).exp();
    ProblemData {
        f: Arc::new(move |x| -128.0 * e(x)),
        g_dirichlet: Arc::new(e),
        g_neumann: Arc::new(move |x, n| -8.0 * e(x) * (n[0] + n[1])),
        exact: None,
    }
}

fn unit_square(p: usize, root: usize, sides: [SideTag; 4]) -> Result<MultipatchTopology> {
    MultipatchTopology::new(
        vec![(GeometryMap::AffineRect { lo: [0.0, 0.0], hi: [1.0, 1.0] }, sides, PatchRole::Base)],
        p,
        root,
    )
}

fn two_features(p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let topo = unit_square(p, 2, [D, N, N, D])?;
    let features = vec![
        zero_feature(1, FeatureKind::Negative, 0, Sector::disc([1.1e-3, 1.1e-3], 1e-3)),
        zero_feature(2, FeatureKind::Negative, 0, Sector::disc([0.89, 0.89], 0.1)),
    ];
    Ok((DefeaturedModel::build(topo, features, BTreeSet::new())?, steep_corner_data(), 1.0))
}

/// Table radii (×10⁻², halved) and centres (×10⁻¹).
const HOLES: [(f64, f64, f64); 27] = [
    (8.13, 0.98, 0.93),
    (6.64, 2.84, 1.24),
    (3.89, 5.46, 0.57),
    (7.40, 7.16, 0.93),
    (8.18, 8.99, 1.04),
    (6.00, 0.67, 3.40),
    (0.85, 3.12, 3.03),
    (9.22, 4.95, 3.08),
    (0.54, 7.06, 2.48),
    (5.27, 8.86, 2.90),
    (1.19, 0.67, 5.35),
    (3.80, 3.28, 4.46),
    (8.13, 5.01, 5.09),
    (2.44, 7.44, 4.88),
    (8.84, 8.93, 5.07),
    (7.13, 1.10, 6.93),
    (3.78, 2.44, 6.78),
    (2.49, 5.45, 7.73),
    (2.53, 7.27, 7.33),
    (6.67, 9.21, 6.96),
    (0.50, 0.22, 8.24),
    (6.85, 3.26, 9.15),
    (6.20, 5.01, 9.10),
    (7.47, 7.06, 8.78),
    (8.77, 8.99, 8.98),
    (2.00, 4.00, 7.00),
    (1.00, 1.00, 9.00),
];

fn many_holes(p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let topo = unit_square(p, 16, [D, N, N, D])?;
    let features = HOLES
        .iter()
        .enumerate()
        .map(|(k, (r, x, y))| {
            zero_feature(k + 1, FeatureKind::Negative, 0, Sector::disc([x * 0.1, y * 0.1], r * 0.5e-2))
        })
        .collect();
    Ok((DefeaturedModel::build(topo, features, BTreeSet::new())?, steep_corner_data(), 1.0))
}

fn manufactured(p: usize) -> Result<(DefeaturedModel, ProblemData, f64)> {
    let topo = unit_square(p, 4, [D; 4])?;
    let u = |x: Point| (PI * x[0]).sin() * (PI * x[1]).sin();
    let data = ProblemData {
        f: Arc::new(move |x| 2.0 * PI * PI * u(x)),
        g_dirichlet: constant(0.0),
        g_neumann: constant_flux(0.0),
        exact: Some(ExactSolution {
            u: Arc::new(u),
            grad: Arc::new(|x: Point| {
                [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()]
            }),
        }),
    };
    Ok((DefeaturedModel::build(topo, vec![], BTreeSet::new())?, data, 1.0))
}
