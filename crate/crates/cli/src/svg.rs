//! Mesh dumps and their SVG rendering.

use std::f64::consts::PI;
use std::fmt::Write;

use defeature::discretization::ModelSpace;
use defeature::geometry::{box_polygon, DefeaturedModel, ElementClass, Point};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Active,
    Cut,
    Exterior,
}

impl CellState {
    pub fn name(self) -> &'static str {
        match self {
            CellState::Active => "active",
            CellState::Cut => "cut",
            CellState::Exterior => "exterior",
        }
    }

    fn fill(self) -> &'static str {
        match self {
            CellState::Active => "#ffffff",
            CellState::Cut => "#f3d08a",
            CellState::Exterior => "#cfcfcf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpCell {
    pub level: usize,
    pub lo: Point,
    pub hi: Point,
    pub state: CellState,
}

/// Active elements of every patch with their trimming state, in parametric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    pub patches: Vec<Vec<DumpCell>>,
}

impl MeshState {
    pub fn from_space(space: &ModelSpace) -> Self {
        let patches = space
            .patches
            .iter()
            .map(|ps| {
                ps.elements
                    .iter()
                    .map(|el| {
                        let b = ps.basis.mesh().cell_box(el.cell);
                        let state = match el.class {
                            ElementClass::Interior => CellState::Active,
                            ElementClass::Cut => CellState::Cut,
                            ElementClass::Exterior => CellState::Exterior,
                        };
                        DumpCell { level: el.cell.level, lo: b.lo, hi: b.hi, state }
                    })
                    .collect()
            })
            .collect();
        Self { patches }
    }

    /// `level x0 y0 x1 y1 state` lines of one patch.
    pub fn dump(&self, patch: usize) -> String {
        let mut s = String::new();
        for c in &self.patches[patch] {
            let _ = writeln!(s, "{} {} {} {} {} {}", c.level, c.lo[0], c.lo[1], c.hi[0], c.hi[1], c.state.name());
        }
        s
    }

    pub fn parse_patch(text: &str) -> Result<Vec<DumpCell>, CliError> {
        let mut out = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || CliError::Config(format!("mesh dump line {}: '{}'", k + 1, line));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let state = match f[5] {
                "active" => CellState::Active,
                "cut" => CellState::Cut,
                "exterior" => CellState::Exterior,
                _ => return Err(bad()),
            };
            out.push(DumpCell {
                level: f[0].parse().map_err(|_| bad())?,
                lo: [num(f[1])?, num(f[2])?],
                hi: [num(f[3])?, num(f[4])?],
                state,
            });
        }
        Ok(out)
    }
}

fn arc_points(center: Point, r: f64, th0: f64, th1: f64) -> Vec<Point> {
    let n = (((th1 - th0).abs() / (2.0 * PI)) * 96.0).ceil().max(8.0) as usize;
    (0..=n)
        .map(|k| {
            let t = th0 + (th1 - th0) * k as f64 / n as f64;
            [center[0] + r * t.cos(), center[1] + r * t.sin()]
        })
        .collect()
}

/// Deterministic SVG of the mesh, the patch outlines and the feature boundaries.
/// Inactive features are dashed red, inserted ones solid blue.
pub fn render_svg(model: &DefeaturedModel, state: &MeshState) -> Result<String, CliError> {
    let topo = &model.topology;
    if state.patches.len() != topo.patches.len() {
        return Err(CliError::Config(format!(
            "mesh state has {} patches, the model {}",
            state.patches.len(),
            topo.patches.len()
        )));
    }
    let outlines: Vec<Vec<Point>> = topo.patches.iter().map(|p| box_polygon(&p.map, [0.0, 0.0], [1.0, 1.0])).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for x in outlines.iter().flatten() {
        for k in 0..2 {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    let size = 800.0;
    let margin = 10.0;
    let scale = (size - 2.0 * margin) / (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let w = (hi[0] - lo[0]) * scale + 2.0 * margin;
    let h = (hi[1] - lo[1]) * scale + 2.0 * margin;
    let px = |x: Point| [margin + (x[0] - lo[0]) * scale, h - margin - (x[1] - lo[1]) * scale];
    let pts = |poly: &[Point]| {
        poly.iter()
            .map(|&x| {
                let p = px(x);
                format!("{:.3},{:.3}", p[0], p[1])
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.3}" height="{:.3}" viewBox="0 0 {:.3} {:.3}">"#,
        w, h, w, h
    );
    for (p, cells) in state.patches.iter().enumerate() {
        let map = &topo.patches[p].map;
        let _ = writeln!(s, r#"<g id="patch{}" stroke="black" stroke-width="0.4">"#, p);
        for c in cells {
            let _ = writeln!(
                s,
                r#"<polygon class="cell {}" fill="{}" points="{}"/>"#,
                c.state.name(),
                c.state.fill(),
                pts(&box_polygon(map, c.lo, c.hi))
            );
        }
        let _ = writeln!(s, "</g>");
    }
    for (p, o) in outlines.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<polygon class="patch" id="outline{}" fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
            p,
            pts(o)
        );
    }
    for f in &model.features {
        let sec = &f.sector;
        let mut arc = arc_points(sec.center, sec.radius, sec.theta0, sec.theta1);
        if !sec.is_full() {
            arc.push(sec.center);
            arc.insert(0, sec.center);
        }
        let (class, style) = if model.is_active(f.id) {
            ("feature active", r##"stroke="#1f4e9c" stroke-width="1.5""##)
        } else {
            ("feature inactive", r##"stroke="#c0392b" stroke-width="1.2" stroke-dasharray="4 3""##)
        };
        let _ = writeln!(
            s,
            r#"<polyline class="{}" id="feature{}" fill="none" {} points="{}"/>"#,
            class,
            f.id,
            style,
            pts(&arc)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
