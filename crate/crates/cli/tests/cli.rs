use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use defeature_cli::CSV_HEADER;

fn defeat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defeat"))
        .current_dir(dir)
        .env_remove("DEFEATURE_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn col(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let k = CSV_HEADER.iter().position(|h| *h == name).unwrap();
    rows.iter().map(|r| r[k].clone()).collect()
}

fn num(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    col(rows, name).iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn presets_are_listed() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(t.path(), &["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    for id in ["disc-hole", "lshape-fillet", "halfdisc-hole", "two-features", "many-holes", "manufactured"] {
        assert!(text.contains(id), "{id}");
    }
}

#[test]
fn manufactured_uniform_rate_is_two() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(
        t.path(),
        &["run", "manufactured", "--p", "2", "--mode", "uniform", "--levels", "0..4", "--out", "m", "-q"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&t.path().join("m/run.csv"));
    assert_eq!(r.len(), 5);
    let (e, h) = (num(&r, "err_energy"), num(&r, "h_max"));
    let rate = (e[3] / e[4]).ln() / (h[3] / h[4]).ln();
    assert!((rate - 2.0).abs() < 0.1, "{rate}");
    assert_eq!(col(&r, "iter"), vec!["0", "1", "2", "3", "4"]);
}

#[test]
fn disc_uniform_sweep_has_six_rows() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(
        t.path(),
        &["run", "disc-hole", "--mode", "uniform", "--eps", "2.5e-3", "--levels", "0..5", "--out", "d", "-q"],
    );
    assert!(o.status.success());
    let r = rows(&t.path().join("d/run.csv"));
    assert_eq!(r.len(), 6);
    let h = num(&r, "h_max");
    assert!(h.windows(2).all(|w| w[1] < w[0]));
    assert!(num(&r, "err_energy").iter().all(|e| *e > 0.0));
    let reports = fs::read_dir(t.path().join("d/reports")).unwrap().count();
    assert_eq!(reports, 6);
}

#[test]
fn two_features_marks_only_the_small_one() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(t.path(), &["run", "two-features", "--budget", "500", "--out", "tf", "-q"]);
    assert!(o.status.success());
    let r = rows(&t.path().join("tf/run.csv"));
    let marked = col(&r, "marked_features");
    assert_eq!(marked.iter().filter(|m| m.as_str() == "1").count(), 1);
    assert!(marked.iter().all(|m| m.is_empty() || m == "1"));
    assert!(col(&r, "err_energy").iter().all(|e| e.is_empty()));
    // per-iteration reports follow the estimator schema
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("tf/reports/iter_000.json")).unwrap()).unwrap();
    assert_eq!(rep["per_feature"].as_array().unwrap().len(), 2);
    assert_eq!(rep["n_dof"].as_u64().unwrap().to_string(), col(&r, "n_dof")[0]);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(defeat(t.path(), &["run", "nope"]).status.code(), Some(2));
    assert_eq!(defeat(t.path(), &["run", "disc-hole", "--theta", "3"]).status.code(), Some(2));
    assert_eq!(defeat(t.path(), &["run", "manufactured", "--eps", "0.1"]).status.code(), Some(2));
    assert_eq!(defeat(t.path(), &["run", "disc-hole", "--levels", "3..1", "--mode", "uniform"]).status.code(), Some(2));
    assert_eq!(defeat(t.path(), &["run", "--bogus-flag"]).status.code(), Some(2));
    fs::write(t.path().join("bad.json"), "{\"preset\": \"disc-hole\", ").unwrap();
    assert_eq!(defeat(t.path(), &["run", "--config", "bad.json"]).status.code(), Some(2));
    fs::write(t.path().join("unknown.json"), r#"{"preset": "disc-hole", "thetta": 0.4}"#).unwrap();
    assert_eq!(defeat(t.path(), &["run", "--config", "unknown.json"]).status.code(), Some(2));
}

/// A run that hits the depth cap exits with 3 and keeps the rows logged so far.
#[test]
fn numerical_abort_keeps_partial_log() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(t.path(), &["run", "two-features", "--budget", "3000", "--out", "a", "-q"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical abort"));
    let r = rows(&t.path().join("a/run.csv"));
    assert!(r.len() > 5);
    assert!(num(&r, "n_dof").iter().all(|n| *n <= 3000.0));
}

#[test]
fn output_dir_from_environment() {
    let t = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_defeat"))
        .current_dir(t.path())
        .env("DEFEATURE_OUT", t.path().join("envout"))
        .args(["run", "manufactured", "--mode", "uniform", "--levels", "0..1", "-q"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(t.path().join("envout/run.csv").exists());
    let o = defeat(t.path(), &["run", "manufactured", "--mode", "uniform", "--levels", "0..0", "-q"]);
    assert!(o.status.success());
    assert!(t.path().join("defeature-out/manufactured/run.csv").exists());
}

#[test]
fn flags_override_file_and_manifest_reproduces() {
    let t = tempfile::tempdir().unwrap();
    fs::write(
        t.path().join("cfg.json"),
        r#"{"preset": "disc-hole", "eps": 0.02, "theta": 0.3, "budget": 400, "alpha_d": 2.0}"#,
    )
    .unwrap();
    let o = defeat(t.path(), &["run", "--config", "cfg.json", "--theta", "0.6", "--out", "a", "-q"]);
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["theta"], 0.6);
    assert_eq!(m["alpha_d"], 2.0);
    assert_eq!(m["eps"], 0.02);
    assert_eq!(m["budget"], 400);
    assert_eq!(m["mode"], "adaptive");
    let o = defeat(t.path(), &["run", "--config", "a/manifest.json", "--out", "b", "-q"]);
    assert!(o.status.success());
    assert_eq!(fs::read(t.path().join("a/run.csv")).unwrap(), fs::read(t.path().join("b/run.csv")).unwrap());
    assert_eq!(
        fs::read(t.path().join("a/manifest.json")).unwrap(),
        fs::read(t.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn render_unit_square_and_disc() {
    let t = tempfile::tempdir().unwrap();
    assert!(defeat(t.path(), &["render", "manufactured", "-o", "sq.svg"]).status.success());
    assert!(defeat(t.path(), &["render", "manufactured", "-o", "sq2.svg"]).status.success());
    let sq = fs::read_to_string(t.path().join("sq.svg")).unwrap();
    assert_eq!(sq.matches(r#"class="cell active""#).count(), 16);
    assert_eq!(sq, fs::read_to_string(t.path().join("sq2.svg")).unwrap());
    assert!(sq.starts_with("<svg") && sq.trim_end().ends_with("</svg>"));

    assert!(defeat(t.path(), &["render", "disc-hole", "-o", "disc.svg"]).status.success());
    let disc = fs::read_to_string(t.path().join("disc.svg")).unwrap();
    assert_eq!(disc.matches(r#"class="patch""#).count(), 5);
    assert_eq!(disc.matches(r#"class="feature inactive""#).count(), 1);

    assert!(defeat(t.path(), &["render", "disc-hole", "--activate", "1", "--level", "2", "-o", "hole.svg"])
        .status
        .success());
    let hole = fs::read_to_string(t.path().join("hole.svg")).unwrap();
    assert_eq!(hole.matches(r#"class="feature active""#).count(), 1);
    assert!(hole.contains(r#"class="cell cut""#));
    assert_eq!(defeat(t.path(), &["render", "disc-hole", "--activate", "7"]).status.code(), Some(2));
}

/// Dumped meshes render to the same bytes as the live state they came from.
#[test]
fn mesh_dump_round_trips_through_renderer() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(
        t.path(),
        &["run", "halfdisc-hole", "--max-iterations", "4", "--svg", "--dump-mesh", "--dump-matrix", "--out", "h", "-q"],
    );
    assert!(o.status.success());
    let mesh = t.path().join("h/mesh");
    let dumps: Vec<String> =
        (0..4).map(|p| mesh.join(format!("iter_003_patch{p}.txt")).display().to_string()).collect();
    for d in &dumps {
        for line in fs::read_to_string(d).unwrap().lines() {
            let f: Vec<&str> = line.split(' ').collect();
            assert_eq!(f.len(), 6);
            assert!(["active", "cut", "exterior"].contains(&f[5]));
        }
    }
    let mut args = vec!["render", "halfdisc-hole", "-o", "again.svg"];
    let features: Vec<String> = rows(&t.path().join("h/run.csv"))
        .iter()
        .take(3)
        .flat_map(|r| r[9].split(';').filter(|s| !s.is_empty()).map(str::to_string).collect::<Vec<_>>())
        .collect();
    let act = features.join(",");
    if !act.is_empty() {
        args.extend(["--activate", act.as_str()]);
    }
    for d in &dumps {
        args.extend(["--from-dump", d.as_str()]);
    }
    assert!(defeat(t.path(), &args).status.success());
    assert_eq!(fs::read(mesh.join("iter_003.svg")).unwrap(), fs::read(t.path().join("again.svg")).unwrap());

    // the matrix dump is a symmetric triplet list
    let text = fs::read_to_string(t.path().join("h/matrix/iter_003.txt")).unwrap();
    let mut entries = std::collections::BTreeMap::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        let (i, j, v): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        entries.insert((i, j), v);
    }
    for (&(i, j), &v) in &entries {
        let w = entries[&(j, i)];
        assert!((v - w).abs() <= 1e-12 * v.abs().max(1.0));
    }
}

#[test]
fn sweep_writes_grid_in_order() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(
        t.path(),
        &["sweep", "disc-hole", "--levels", "0..2", "--eps-values", "0.08,0.04,0.02", "--out", "s", "-q"],
    );
    assert!(o.status.success());
    let text = fs::read_to_string(t.path().join("s/grid.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,level,n_dof,h_max,est_total,est_num,est_def,est_comp,err_energy");
    let keys: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let mut expected = Vec::new();
    for e in ["0.08", "0.04", "0.02"] {
        for j in ["0", "1", "2"] {
            expected.push((e.to_string(), j.to_string()));
        }
    }
    assert_eq!(keys, expected);
    assert_eq!(defeat(t.path(), &["sweep", "manufactured"]).status.code(), Some(2));
}

#[test]
fn sweep_eps_mode_follows_run_schema() {
    let t = tempfile::tempdir().unwrap();
    let o = defeat(t.path(), &["run", "disc-hole", "--mode", "sweep-eps", "--levels", "0..2", "--out", "e", "-q"]);
    assert!(o.status.success());
    let r = rows(&t.path().join("e/run.csv"));
    assert_eq!(r.len(), 4);
    let d = num(&r, "est_def");
    assert!(d.windows(2).all(|w| w[1] < w[0]));
    assert!(t.path().join("e/grid.csv").exists());
}

#[test]
fn custom_geometry_runs() {
    let t = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "geometry": {
            "root": 2,
            "patches": [
                {"map": {"kind": "affine_rect", "lo": [0, 0], "hi": [1, 1]}, "sides": ["dirichlet", "neumann", "neumann", "dirichlet"]},
                {"map": {"kind": "affine_rect", "lo": [1, 0], "hi": [2, 1]}, "sides": ["dirichlet", "neumann", "neumann", "neumann"]}
            ],
            "features": [{"id": 1, "kind": "negative", "patch": 1, "center": [1.5, 0.5], "radius": 0.05}],
            "data": {"f": 1.0}
        },
        "max_iterations": 3
    }"#;
    fs::write(t.path().join("g.json"), cfg).unwrap();
    let o = defeat(t.path(), &["run", "--config", "g.json", "--out", "g", "-q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&t.path().join("g/run.csv"));
    assert_eq!(r.len(), 3);
    assert!(num(&r, "est_def")[0] > 0.0);
    let overlap = cfg.replace("[1.5, 0.5], \"radius\": 0.05", "[1.5, 0.5], \"radius\": 0.9");
    fs::write(t.path().join("bad.json"), overlap).unwrap();
    assert_eq!(defeat(t.path(), &["run", "--config", "bad.json"]).status.code(), Some(2));
}
