#![allow(clippy::type_complexity)]
//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines reach the console under `cargo test`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use defeature::adaptivity::{run_adaptive, run_uniform, IterationRecord};
use defeature::assembly::solve;
use defeature::discretization::{MeshSet, ModelSpace};
use defeature::estimator::{data_mean, defeaturing_estimator};
use defeature::geometry::{Circle, GeometryMap, Keep, TrimCurve};
use defeature::hiermesh::{Cell, HierarchicalMesh, ThbBasis};
use defeature::presets::{build, PresetId};
use defeature::quadrature::cut_cell_rule;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn lcg(s: &mut u64) -> f64 {
    *s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*s >> 11) as f64 / (1u64 << 53) as f64
}

fn rate(a: f64, b: f64, ha: f64, hb: f64) -> f64 {
    (a / b).ln() / (ha / hb).ln()
}

/// Slope of the least-squares line through `(ln x, ln y)`.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn c1_uniform_h_convergence() -> Outcome {
    let pr = build(PresetId::DiscHole, Some(1.5625e-4), Some(2)).unwrap();
    let t = Instant::now();
    let recs = run_uniform(&pr.model, &pr.data, &pr.config, 0..=4, |_| Ok(())).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (a, b) = (&recs[2], &recs[4]);
    let err = rate(a.err_energy.unwrap(), b.err_energy.unwrap(), a.h_max, b.h_max);
    let est = rate(a.est_total, b.est_total, a.h_max, b.h_max);
    let ok = |r: f64| (1.7..=2.3).contains(&r);
    outcome(
        ok(err) && ok(est) && secs <= 120.0,
        format!("error rate {:.3}, estimator rate {:.3} over j=2..4, {:.1}s", err, est, secs),
    )
}

fn reference_defeaturing_error(eps: f64) -> f64 {
    (PI / 2.0).sqrt() * eps * eps * (0.5f64.ln() - eps.ln()).sqrt()
}

fn c2_eps_convergence() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut checked = 0;
    for eps in [0.08, 0.04, 0.02, 0.01] {
        let pr = build(PresetId::DiscHole, Some(eps), Some(2)).unwrap();
        let r = &run_uniform(&pr.model, &pr.data, &pr.config, 5..=5, |_| Ok(())).unwrap()[0];
        let share = r.est_num / r.est_total;
        let reference = reference_defeaturing_error(eps);
        let rel = (r.err_energy.unwrap() - reference).abs() / reference;
        if share <= 0.1 {
            checked += 1;
            pass &= rel <= 0.05;
            lines.push(format!("eps {eps}: rel {:.2e}", rel));
        } else {
            lines.push(format!("eps {eps}: numerical share {:.2}, skipped", share));
        }
    }
    outcome(pass && checked > 0, format!("{} checked; {}", checked, lines.join("; ")))
}

fn c3_compatibility_mean() -> Outcome {
    let mut worst: f64 = 0.0;
    for eps in [0.08, 5e-3, 1.5625e-4] {
        let pr = build(PresetId::DiscHole, Some(eps), None).unwrap();
        let piece = &pr.model.sigma_pieces()[0];
        worst = worst.max((data_mean(&pr.model, &pr.data, piece) - eps / 2.0).abs());
    }
    let pr = build(PresetId::DiscHole, None, None).unwrap();
    let gap = |j: usize| {
        let meshes = MeshSet::uniform(&pr.model.topology, j).unwrap();
        let space = ModelSpace::build(&pr.model, &meshes, pr.config.depth).unwrap();
        let sol = solve(&pr.model, &space, &pr.data, pr.config.cg_tol).unwrap();
        let f = defeaturing_estimator(&pr.model, &space, &sol, &pr.data).unwrap();
        (f[0].pieces[0].mean_discrete - f[0].pieces[0].mean_data).abs()
    };
    let (g3, g5) = (gap(3), gap(5));
    outcome(
        worst <= 1e-10 && g5 <= 0.1 * g3,
        format!("data mean error {:.1e}; quadrature mean gap {:.2e} at j=3, {:.2e} at j=5", worst, g3, g5),
    )
}

fn effectivity(r: &IterationRecord) -> f64 {
    r.est_total / r.err_energy.unwrap()
}

fn c4_effectivity() -> Outcome {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut n = 0;
    for id in [PresetId::DiscHole, PresetId::HalfdiscHole, PresetId::LshapeFillet, PresetId::Manufactured] {
        let pr = build(id, None, None).unwrap();
        let run = run_adaptive(pr.model.clone(), &pr.data, &pr.config, |_| Ok(())).unwrap();
        for r in &run.records {
            let e = effectivity(r);
            lo = lo.min(e);
            hi = hi.max(e);
            n += 1;
        }
    }
    // the uniform (ε, h) grid of the disc: ε = 8e-2 / 2^k, j = 0..5
    let eps: Vec<f64> = (0..10).map(|k| 0.08 / f64::powi(2.0, k)).collect();
    let cfg = defeature_cli::config::ConfigFile { preset: Some("disc-hole".into()), ..Default::default() };
    let grid = defeature_cli::grid(&cfg, &eps, 0..=5).unwrap();
    let (mut def, mut num) = (Vec::new(), Vec::new());
    for (_, _, r) in &grid {
        let e = effectivity(r);
        lo = lo.min(e);
        hi = hi.max(e);
        n += 1;
        if r.est_def > r.est_num {
            def.push(e);
        } else {
            num.push(e);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (md, mn) = (mean(&def), mean(&num));
    outcome(
        lo >= 1.0 && hi <= 25.0 && md < mn,
        format!(
            "effectivity in [{:.2}, {:.2}] over {} solves; mean {:.2} defeaturing-dominant ({} pts) vs {:.2} numerical-dominant ({} pts)",
            lo, hi, n, md, def.len(), mn, num.len()
        ),
    )
}

fn c5_small_features_first() -> Outcome {
    let pr = build(PresetId::TwoFeatures, None, None).unwrap();
    let mut cfg = pr.config.clone();
    cfg.alpha_d = 4.0;
    cfg.alpha_n = 1.0;
    cfg.theta = 0.5;
    cfg.max_dofs = Some(500);
    let run = run_adaptive(pr.model.clone(), &pr.data, &cfg, |_| Ok(())).unwrap();
    let first = run.records.iter().position(|r| r.marked_features.contains(&1));
    let f2 = run.records.iter().any(|r| r.marked_features.contains(&2));
    let last_dofs = run.records.last().unwrap().n_dof;

    cfg.geometric_refinement = false;
    let frozen = run_adaptive(pr.model.clone(), &pr.data, &cfg, |_| Ok(())).unwrap();
    let (a, b) = (&frozen.records[0], frozen.records.last().unwrap());
    let stagnates = b.est_def >= 0.5 * a.est_def;
    let decreases = b.est_num < a.est_num;
    outcome(
        first.is_some_and(|k| k < 6) && !f2 && last_dofs > 500 && stagnates && decreases,
        format!(
            "F1 marked at iteration {:?}, F2 marked {}, final n_dof {}; frozen geometry E_D {:.3e} -> {:.3e}, E_N {:.3e} -> {:.3e}",
            first, f2, last_dofs, a.est_def, b.est_def, a.est_num, b.est_num
        ),
    )
}

/// Truncated hierarchical basis of a two-level mesh built from the definition:
/// coarse functions expanded by two-scale relations with every fine function
/// supported in the refined region cut away.
fn two_level_oracle(m: &HierarchicalMesh) -> Vec<((usize, [usize; 2]), Vec<([usize; 2], f64)>)> {
    let (k0, k1) = (m.knot_vector(0), m.knot_vector(1));
    let s = k0.two_scale(&k1).unwrap();
    let (n0, n1) = (m.n_funcs(0), m.n_funcs(1));
    let inside = |l: usize, f: [usize; 2], test: &dyn Fn(Cell) -> bool| {
        let b = m.function_support(l, f);
        m.cells_in_box(l, &b).iter().all(|&c| test(c))
    };
    let fine_in_d1 = |f: [usize; 2]| inside(1, f, &|c| m.in_domain(c));
    let mut out = Vec::new();
    for j in 0..n0 {
        for i in 0..n0 {
            if inside(0, [i, j], &|c| m.is_refined(c)) {
                continue;
            }
            let mut coeffs = Vec::new();
            for &(fj, cy) in &s[j] {
                for &(fi, cx) in &s[i] {
                    if !fine_in_d1([fi, fj]) {
                        coeffs.push(([fi, fj], cx * cy));
                    }
                }
            }
            out.push(((0, [i, j]), coeffs));
        }
    }
    for j in 0..n1 {
        for i in 0..n1 {
            if fine_in_d1([i, j]) {
                out.push(((1, [i, j]), vec![([i, j], 1.0)]));
            }
        }
    }
    out
}

/// THB evaluation against the oracle on every refinement pattern of a 4×4 root.
fn thb_matches_oracle_on_all_two_level_meshes() -> (bool, f64) {
    use rayon::prelude::*;
    let base = HierarchicalMesh::new(2, 4).unwrap();
    let roots = base.active_cells();
    let worst = (1u32..1 << 16)
        .into_par_iter()
        .map(|mask| {
            let pick: Vec<Cell> =
                roots.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, c)| *c).collect();
            let m = base.refine(&pick).unwrap();
            let b = ThbBasis::new(&m);
            let oracle = two_level_oracle(&m);
            let ids: Vec<_> = oracle.iter().map(|(f, _)| *f).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            let mut got_ids = b.functions().to_vec();
            got_ids.sort();
            if got_ids != sorted {
                return f64::INFINITY;
            }
            let fine = m.space(1);
            let mut s = mask as u64;
            let mut worst: f64 = 0.0;
            for _ in 0..16 {
                let x = [lcg(&mut s), lcg(&mut s)];
                let tensor = fine.eval(x).unwrap();
                let vals = b.eval(x, 0).unwrap();
                for (f, coeffs) in &oracle {
                    let want: f64 =
                        coeffs.iter().map(|(ij, c)| c * tensor.iter().find(|t| t.0 == *ij).map_or(0.0, |t| t.1)).sum();
                    let id = b.function_index(*f).unwrap();
                    let got = vals.iter().find(|v| v.0 == id).map_or(0.0, |v| v.1[0]);
                    worst = worst.max((got - want).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    (worst <= 1e-12, worst)
}

fn c6_property_suite() -> Outcome {
    let mut pou: f64 = 0.0;
    let mut admissible = true;
    let mut sym: f64 = 0.0;
    let mut res: f64 = 0.0;
    let mut meshes = 0;
    for id in [PresetId::HalfdiscHole, PresetId::TwoFeatures] {
        let pr = build(id, None, None).unwrap();
        let mut cfg = pr.config.clone();
        cfg.max_iterations = 10;
        cfg.max_dofs = None;
        cfg.mu = 2;
        let mut seed = 3u64;
        run_adaptive(pr.model.clone(), &pr.data, &cfg, |s| {
            meshes += 1;
            for ps in &s.space.patches {
                admissible &= ps.basis.is_admissible(2).is_ok();
                for _ in 0..1000 {
                    let x = [lcg(&mut seed), lcg(&mut seed)];
                    let sum: f64 = ps.basis.eval(x, 0)?.iter().map(|(_, j)| j[0]).sum();
                    pou = pou.max((sum - 1.0).abs());
                }
            }
            sym = sym.max(s.solution.max_symmetry_defect());
            res = res.max(s.solution.max_cg_residual());
            Ok(())
        })
        .unwrap();
    }
    let (oracle_ok, oracle_err) = thb_matches_oracle_on_all_two_level_meshes();
    let map = GeometryMap::AffineRect { lo: [0.0, 0.0], hi: [1.0, 1.0] };
    let hole = TrimCurve::new(Circle { center: [0.5, 0.5], radius: 0.25 }, Keep::Outside, None).unwrap();
    let area = cut_cell_rule(&map, [0.0, 0.0], [1.0, 1.0], &[hole], 7, 3).unwrap().measure();
    let area_err = (area - (1.0 - PI / 16.0)).abs();
    outcome(
        pou <= 1e-10 && admissible && sym <= 1e-12 && res <= 1e-12 && oracle_ok && area_err <= 1e-5,
        format!(
            "{} meshes: partition of unity {:.1e}, admissible {}, symmetry {:.1e}, CG residual {:.1e}; oracle on 65535 meshes {:.1e}; cut area error {:.1e}",
            meshes, pou, admissible, sym, res, oracle_err, area_err
        ),
    )
}

fn c7_adaptive_rate() -> Outcome {
    let pr = build(PresetId::HalfdiscHole, None, Some(2)).unwrap();
    let run = run_adaptive(pr.model.clone(), &pr.data, &pr.config, |_| Ok(())).unwrap();
    let after: Vec<&IterationRecord> = run.records.iter().filter(|r| r.n_active_features > 0).collect();
    if after.len() < 3 {
        return outcome(false, format!("only {} iterations after insertion", after.len()));
    }
    let x: Vec<f64> = after.iter().map(|r| r.n_dof as f64).collect();
    let y: Vec<f64> = after.iter().map(|r| r.est_total).collect();
    let slope = loglog_slope(&x, &y);
    outcome(
        (-1.3..=-0.7).contains(&slope),
        format!("slope {:.3} over {} iterations, n_dof {} to {}", slope, after.len(), x[0], x[x.len() - 1]),
    )
}

fn c8_determinism() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("defeature-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).unwrap();
    let defeat = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_defeat"))
            .current_dir(&tmp)
            .env_remove("DEFEATURE_OUT")
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&o.stderr));
    };
    let mut same = 0;
    let mut differ = Vec::new();
    let ids = PresetId::ALL;
    for id in ids {
        let a = format!("{}-a", id.name());
        let b = format!("{}-b", id.name());
        defeat(&["run", id.name(), "--max-iterations", "8", "--out", &a, "-q"]);
        defeat(&["run", "--config", &format!("{}/manifest.json", a), "--out", &b, "-q"]);
        let (ca, cb) =
            (fs::read(tmp.join(&a).join("run.csv")).unwrap(), fs::read(tmp.join(&b).join("run.csv")).unwrap());
        if ca == cb && !ca.is_empty() {
            same += 1;
        } else {
            differ.push(id.name());
        }
    }
    let _ = fs::remove_dir_all(&tmp);
    outcome(differ.is_empty(), format!("{} of {} presets byte-identical {:?}", same, ids.len(), differ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "uniform h-convergence", c1_uniform_h_convergence),
        (2, "defeaturing eps-convergence", c2_eps_convergence),
        (3, "compatibility mean", c3_compatibility_mean),
        (4, "effectivity", c4_effectivity),
        (5, "small features first", c5_small_features_first),
        (6, "property suite", c6_property_suite),
        (7, "adaptive rate", c7_adaptive_rate),
        (8, "determinism", c8_determinism),
    ];
    let only: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, name, f) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} ({}): {} - {} [{:.1}s]",
            k,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        std::process::exit(1);
    }
}
