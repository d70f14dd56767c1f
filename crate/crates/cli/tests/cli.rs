use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nhlz")
}

fn scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn run_in(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

const SUPERPARABOLIC: &str = "[drive]\nalpha = 1.0\ngamma3 = 1.0\ncoupling = 1.0\n";
const PARABOLIC: &str = "[drive]\nalpha = 1.0\nbeta = 1.0\ncoupling = 1.0\n";

// Frozen from `nhlz simulate` on the scenario above with default options.
const SUPERPARABOLIC_P1: f64 = 0.468_159_259_778_904_4;
const SUPERPARABOLIC_S0: f64 = 15.703_141_42;

#[test]
fn simulate_reproduces_two_ep_regression() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "s.toml", SUPERPARABOLIC);
    let out = dir.path().join("out");
    let o = run_in("simulate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    let p1 = summary["finals"]["p1_final"].as_f64().unwrap();
    let s0 = summary["s0_ratio"].as_f64().unwrap();
    assert!((p1 - SUPERPARABOLIC_P1).abs() < 1e-6, "{p1}");
    assert!((s0 - SUPERPARABOLIC_S0).abs() < 1e-5 * SUPERPARABOLIC_S0, "{s0}");
    assert_eq!(summary["exceptional_points"]["ep_times"].as_array().unwrap().len(), 2);
    assert_eq!(summary["scenario"]["scenario"]["integration"]["samples"], 1001);

    let (header, rows) = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(header.join(","), "t,re_psi1,im_psi1,re_psi2,im_psi2,s0,s1,s2,s3,p1,p2");
    assert_eq!(rows.len(), 1001);
    // P1 rises through the broken region and settles near one half.
    let p1s: Vec<f64> = rows.iter().map(|r| r[9].parse().unwrap()).collect();
    assert!(p1s[0] < 1e-3 && p1s[1000] == p1);
}

#[test]
fn identical_scenarios_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "s.toml", SUPERPARABOLIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_in("simulate", &cfg, &a, &[]).status.success());
    assert!(run_in("simulate", &cfg, &b, &[]).status.success());
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn hermitian_limit_conserves_norm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "h.toml",
        "[drive]\nalpha = 1.0\ngamma3 = 1.0\ncoupling = 0.0\n[integration]\nt_start = -10.0\nt_end = 10.0\n",
    );
    let out = dir.path().join("out");
    assert!(run_in("simulate", &cfg, &out, &[]).status.success());
    let s = read_json(&out.join("summary.json"));
    assert!(s["diagnostics"]["s0_drift"].as_f64().unwrap() < 1e-9);

    let out = dir.path().join("cmp");
    assert!(run_in("compare", &cfg, &out, &[]).status.success());
    let report = read_json(&out.join("compare.json"));
    for m in report["methods"].as_array().unwrap() {
        if m["method"] == "appendix" {
            continue;
        }
        let s0 = m["s0_final"].as_f64().unwrap();
        if m["method"] == "numeric" {
            assert!((s0 - 1.0).abs() < 1e-9);
        } else {
            assert_eq!(s0, 1.0, "{}", m["method"]);
        }
    }
}

#[test]
fn malformed_config_exits_2_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (i, text) in ["[drive]\nalpha = 1.0\n", "[drive\n", "[drive]\nalpha = 1.0\ncoupling = 1.0\nextra = 1\n"]
        .iter()
        .enumerate()
    {
        let cfg = scenario(dir.path(), &format!("bad{i}.toml"), text);
        for cmd in ["simulate", "compare", "sweep", "lattice-run"] {
            let o = run_in(cmd, &cfg, &out, &[]);
            assert_eq!(o.status.code(), Some(2), "{cmd} {text}");
        }
    }
    let o = run_in("simulate", &dir.path().join("missing.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn overflow_exits_3_with_diagnostic_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "o.toml",
        "[drive]\nalpha = 1.0\nbeta = 0.001\ncoupling = 20.0\n[integration]\nt_start = -50.0\nt_end = 50.0\n",
    );
    let out = dir.path().join("out");
    let o = run_in("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["diagnostic.json"]);
    let d = read_json(&out.join("diagnostic.json"));
    assert!(d["error"].as_str().unwrap().contains("overflow"));
    assert!(d["detail"]["diagnostics"]["overflow_at"].is_number());
}

fn method(report: &Value, name: &str) -> Value {
    report["methods"].as_array().unwrap().iter().find(|m| m["method"] == name).unwrap().clone()
}

#[test]
fn compare_reports_formula_quality() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cubic");
    assert!(run_in("compare", &scenario(dir.path(), "c.toml", SUPERPARABOLIC), &out, &[]).status.success());
    let r = read_json(&out.join("compare.json"));
    let simple = method(&r, "simple")["abs_err_s0"].as_f64().unwrap();
    let modified = method(&r, "modified")["abs_err_s0"].as_f64().unwrap();
    assert!(modified <= simple, "{modified} vs {simple}");
    assert!(out.join("numeric.csv").exists() && out.join("piecewise.csv").exists());
    let (header, rows) = csv_rows(&out.join("compare.csv"));
    assert_eq!(header[0], "method");
    assert_eq!(rows.len(), 6);

    let out = dir.path().join("parabolic");
    assert!(run_in("compare", &scenario(dir.path(), "p.toml", PARABOLIC), &out, &[]).status.success());
    let r = read_json(&out.join("compare.json"));
    assert!(method(&r, "simple")["rel_err_s0"].as_f64().unwrap() < 0.46);
    let p1_num = method(&r, "numeric")["p1_final"].as_f64().unwrap();
    let p1_simple = method(&r, "simple")["p1_final"].as_f64().unwrap();
    assert!((p1_num - p1_simple).abs() < 0.01);
    let app = method(&r, "appendix")["s0_final"].as_f64().unwrap();
    assert!((app - method(&r, "simple")["s0_final"].as_f64().unwrap()).abs() < 1e-6);
}

#[test]
fn eps_and_appendix_check_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "p.toml", PARABOLIC);
    let o = run(&["eps", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let times: Vec<f64> = v["ep_set"]["ep_times"].as_array().unwrap().iter().map(|e| e["time"].as_f64().unwrap()).collect();
    assert_eq!(times.len(), 2);
    assert!((times[0] + 1.61803).abs() < 1e-4 && (times[1] - 0.61803).abs() < 1e-4);

    let out = dir.path().join("ac");
    let o = run_in("appendix-check", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("appendix_check.json"));
    assert_eq!(v["agree"], true);

    let o = run_in("appendix-check", &cfg, &dir.path().join("tight"), &["--tol", "1e-15"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.path().join("tight/diagnostic.json").exists());

    let cubic = scenario(dir.path(), "c.toml", SUPERPARABOLIC);
    assert_eq!(run(&["appendix-check", "--config", cubic.to_str().unwrap()]).status.code(), Some(2));
}

const LATTICE: &str = "[lattice]\nkappa = 1.0\ngainloss = 1.0\nforce = 0.1\nk0 = 0.6\nsites = 128\nsigma_k = 0.1\nt_end = 4.0\nsamples = 5\n[initial]\nlevel = 1\n";

#[test]
fn lattice_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "l.toml", LATTICE);
    let o = run(&["lattice-map", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ep_count_generic"], 6);
    assert_eq!(v["counts_agree"], true);
    assert!((v["effective_drive"]["coefficients"][0].as_f64().unwrap() - 0.2).abs() < 1e-15);

    let out = dir.path().join("run");
    let o = run_in("lattice-run", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("lattice.csv"));
    assert_eq!(header.join(","), "t,site,re,im");
    assert_eq!(rows.len(), 5 * 128);
    assert_eq!(rows[0][1], "-64");
    let (header, rows) = csv_rows(&out.join("projected.csv"));
    assert_eq!(header.join(","), "t,re_psi1,im_psi1,re_psi2,im_psi2,s0,s1,s2,s3,p1,p2");
    assert_eq!(rows.len(), 5);
    // Starts in the ψ(k0)-dominated Bloch eigenstate.
    let p1: f64 = rows[0][9].parse().unwrap();
    assert!(p1 > 0.85, "{p1}");

    let no_t_end = scenario(dir.path(), "m.toml", &LATTICE.replace("t_end = 4.0\n", ""));
    assert_eq!(run_in("lattice-run", &no_t_end, &dir.path().join("x"), &[]).status.code(), Some(2));
    assert!(!dir.path().join("x").exists());
}

fn sweep_cells(out: &Path) -> Vec<(f64, f64, usize, usize)> {
    let (_, rows) = csv_rows(&out.join("sweep.csv"));
    rows.iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect()
}

/// Neighbouring cells with different EP counts must straddle the surface.
fn boundary_on_surface(cells: &[(f64, f64, usize, usize)], ny: usize, q: impl Fn(f64, f64) -> f64) {
    let nx = cells.len() / ny;
    let mut crossings = 0;
    for i in 0..nx {
        for j in 0..ny {
            let c = cells[i * ny + j];
            assert_eq!(c.2, c.3, "root count vs surface at {c:?}");
            for n in [(i + 1 < nx).then(|| cells[(i + 1) * ny + j]), (j + 1 < ny).then(|| cells[i * ny + j + 1])].into_iter().flatten() {
                if n.2 != c.2 {
                    crossings += 1;
                    assert!(q(c.0, c.1).signum() != q(n.0, n.1).signum(), "{c:?} {n:?}");
                }
            }
        }
    }
    assert!(crossings > 0);
}

#[test]
fn sweeps_trace_critical_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "p.toml",
        &format!("{PARABOLIC}[sweep]\nfinals = false\naxes = [{{ name = \"alpha\", start = 0.1, stop = 3.0, count = 30 }}, {{ name = \"beta\", start = 0.05, stop = 2.0, count = 25 }}]\n"),
    );
    let out = dir.path().join("p");
    assert!(run_in("sweep", &cfg, &out, &[]).status.success());
    let cells = sweep_cells(&out);
    assert_eq!(cells.len(), 30 * 25);
    boundary_on_surface(&cells, 25, |a, b| a.powi(4) - 16.0 * b * b);
    let (header, _) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header.join(","), "alpha,beta,ep_count,surface_count,p1,p2,s0_ratio,status");

    let cfg = scenario(
        dir.path(),
        "c.toml",
        "[drive]\nalpha = -1.0\ngamma3 = 0.1\ncoupling = 1.0\n[sweep]\nfinals = false\naxes = [{ name = \"alpha\", start = -3.0, stop = -0.1, count = 30 }, { name = \"gamma3\", start = 0.02, stop = 2.0, count = 25 }]\n",
    );
    let out = dir.path().join("c");
    assert!(run_in("sweep", &cfg, &out, &[]).status.success());
    boundary_on_surface(&sweep_cells(&out), 25, |a, g| 4.0 * a.powi(3) + 27.0 * g);
}

#[test]
fn single_point_sweep_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "s.toml",
        &format!("{SUPERPARABOLIC}[sweep]\naxes = [{{ name = \"alpha\", start = 1.0, stop = 1.0, count = 1 }}]\n"),
    );
    let (sw, sim) = (dir.path().join("sw"), dir.path().join("sim"));
    assert!(run_in("sweep", &cfg, &sw, &[]).status.success());
    assert!(run_in("simulate", &cfg, &sim, &[]).status.success());
    let (_, rows) = csv_rows(&sw.join("sweep.csv"));
    let summary = read_json(&sim.join("summary.json"));
    let p1: f64 = rows[0][3].parse().unwrap();
    let s0: f64 = rows[0][5].parse().unwrap();
    assert_eq!(p1, summary["finals"]["p1_final"].as_f64().unwrap());
    assert_eq!(s0, summary["s0_ratio"].as_f64().unwrap());
    assert_eq!(rows[0][6], "ok");
}

#[test]
fn seed_controls_random_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "r.toml",
        &format!("{SUPERPARABOLIC}[initial]\nkind = \"random\"\n[integration]\nsamples = 3\n"),
    );
    let first_row = |out: &Path| csv_rows(&out.join("trajectory.csv")).1[0].clone();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (d, seed) in dirs.iter().zip(["5", "5", "6"]) {
        assert!(run_in("simulate", &cfg, d, &["--seed", seed]).status.success());
    }
    assert_eq!(first_row(&dirs[0]), first_row(&dirs[1]));
    assert_ne!(first_row(&dirs[0]), first_row(&dirs[2]));
}

#[test]
fn tol_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "s.toml", SUPERPARABOLIC);
    let out = dir.path().join("o");
    assert!(run_in("simulate", &cfg, &out, &["--tol", "1e-6"]).status.success());
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["setup"]["integration"]["rel_tol"], 1e-6);
    assert_eq!(run_in("simulate", &cfg, &out, &["--tol", "-1"]).status.code(), Some(2));
}
