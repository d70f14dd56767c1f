//! One function per subcommand. Each renders its files into a [`Bundle`]
//! and only touches the output directory once everything succeeded.

use nhlz::analytic::{
    oscillatory_tails, piecewise_trajectory, s0_infinity_modified, s0_infinity_modified_printed, s0_infinity_simple,
    two_ep_ingredients, AnalyticError, PiecewiseOptions,
};
use nhlz::eps::{classify_parabolic, classify_superparabolic, exceptional_points, first_transition_point, SurfaceClass};
use nhlz::integrator::{
    integrate_amplitudes, integrate_stokes, transmission, IntegrationOptions, IntegratorError, Representation, Trajectory,
};
use nhlz::lattice::{
    effective_parabolic, ep_count_from_lattice, ep_count_generic, gaussian_wavepacket, propagate_lattice, Expansion,
};
use nhlz::model::{stokes_from_state, DriveParams, StokesVector, TwoLevelState};
use nhlz::specfun::{hyperbolic_moment, i2_series, s0_infinity_parabolic_appendix, SeriesControl};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{json, lattice_csv, num, trajectory_csv, Bundle, Table};
use crate::scenario::{AxisName, Resolved};
use crate::CliError;

fn numeric(message: impl Into<String>, detail: Value) -> CliError {
    CliError::Numeric { message: message.into(), detail }
}

fn drive_json(p: &DriveParams) -> Value {
    json!({ "coefficients": p.coeffs(), "coupling": p.coupling() })
}

/// Integrates the two-level system in the requested representation.
/// Overflow and solver failures become numeric errors.
pub fn run_two_level(params: &DriveParams, initial: &TwoLevelState, opts: &IntegrationOptions) -> Result<Trajectory, CliError> {
    opts.validate().map_err(|e| CliError::Config(format!("integration: {e}")))?;
    let result = match opts.representation {
        Representation::Stokes => integrate_stokes(params, &stokes_from_state(initial), opts),
        _ => integrate_amplitudes(params, initial, opts),
    };
    let detail = || json!({ "drive": drive_json(params), "integration": opts });
    let traj = result.map_err(|e| match e {
        IntegratorError::InvalidOptions(m) => CliError::Config(format!("integration: {m}")),
        other => numeric(other.to_string(), detail()),
    })?;
    if let Some(t) = traj.diagnostics.overflow_at {
        let mut d = detail();
        d["diagnostics"] = serde_json::to_value(traj.diagnostics).expect("plain data");
        return Err(numeric(format!("population overflow after t = {t}"), d));
    }
    Ok(traj)
}

#[derive(Serialize)]
struct Setup {
    drive: Value,
    integration: IntegrationOptions,
    initial: TwoLevelState,
    initial_stokes: StokesVector,
}

fn setup(r: &Resolved) -> Result<(DriveParams, IntegrationOptions, TwoLevelState), CliError> {
    let params = r.drive()?;
    let opts = r.integration_options(&params);
    opts.validate().map_err(|e| CliError::Config(format!("integration: {e}")))?;
    let initial = r.initial_state(&params, opts.t_start, 0)?;
    Ok((params, opts, initial))
}

pub fn simulate(r: &Resolved) -> Result<Bundle, CliError> {
    let (params, opts, initial) = setup(r)?;
    let traj = run_two_level(&params, &initial, &opts)?;
    let s_in = traj.stokes[0];
    let finals = transmission(&traj).expect("non-empty trajectory");
    let summary = json!({
        "command": "simulate",
        "scenario": r,
        "setup": Setup { drive: drive_json(&params), integration: opts, initial, initial_stokes: s_in },
        "finals": finals,
        "s0_ratio": finals.s0_final / s_in.s0,
        "diagnostics": traj.diagnostics,
        "exceptional_points": exceptional_points(&params),
    });
    let mut b = Bundle::default();
    b.add("trajectory.csv", trajectory_csv(&traj));
    b.add("summary.json", json(&summary));
    Ok(b)
}

#[derive(Serialize)]
struct MethodRow {
    method: &'static str,
    s0_final: Option<f64>,
    p1_final: Option<f64>,
    p2_final: Option<f64>,
    abs_err_s0: Option<f64>,
    rel_err_s0: Option<f64>,
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

impl MethodRow {
    fn new(method: &'static str, s0: Result<f64, String>, s3: f64, reference: f64) -> Self {
        match s0 {
            Ok(s0) => {
                let p1 = (s0 - s3) / (2.0 * s0);
                MethodRow {
                    method,
                    s0_final: Some(s0),
                    p1_final: Some(p1),
                    p2_final: Some(1.0 - p1),
                    abs_err_s0: Some((s0 - reference).abs()),
                    rel_err_s0: Some((s0 - reference).abs() / reference.abs()),
                    error: None,
                    warning: None,
                }
            }
            Err(e) => MethodRow {
                method,
                s0_final: None,
                p1_final: None,
                p2_final: None,
                abs_err_s0: None,
                rel_err_s0: None,
                error: Some(e),
                warning: None,
            },
        }
    }
}

fn formula(f: fn(&DriveParams) -> Result<f64, AnalyticError>, p: &DriveParams) -> Result<f64, String> {
    f(p).map_err(|e| e.to_string())
}

/// Numeric, piecewise-analytic and closed-form estimates of `S0(∞)`, all
/// normalised to the initial `S0`.
pub fn compare(r: &Resolved) -> Result<Bundle, CliError> {
    let (params, opts, initial) = setup(r)?;
    let traj = run_two_level(&params, &initial, &opts)?;
    let s_in = traj.stokes[0];
    let s3 = s_in.s3 / s_in.s0;
    let reference = traj.stokes.last().expect("non-empty").s0 / s_in.s0;

    let unit = StokesVector::new(1.0, s_in.s1 / s_in.s0, s_in.s2 / s_in.s0, s3);
    let piecewise = piecewise_trajectory(&params, &unit, &opts.grid(), &PiecewiseOptions::default());
    let appendix = |p: &DriveParams| -> Result<f64, String> {
        if p.degree() != 2 {
            return Err("needs a parabolic drive".into());
        }
        s0_infinity_parabolic_appendix(p).map_err(|e| e.to_string())
    };
    let mut pw_row = MethodRow::new(
        "piecewise",
        piecewise.as_ref().map(|(t, _)| t.stokes.last().expect("non-empty").s0).map_err(|e| e.to_string()),
        s3,
        reference,
    );
    if let Ok((t, _)) = &piecewise {
        if let Some(k) = t.stokes.iter().position(|s| s.s0 < s.s3.abs() * (1.0 - 1e-3)) {
            pw_row.warning = Some(format!("glued solution violates S0 >= |S3| from t = {}", t.times[k]));
        }
    }
    let rows = vec![
        MethodRow::new("numeric", Ok(reference), s3, reference),
        pw_row,
        MethodRow::new("simple", formula(s0_infinity_simple, &params), s3, reference),
        MethodRow::new("modified", formula(s0_infinity_modified, &params), s3, reference),
        MethodRow::new("modified_printed", formula(s0_infinity_modified_printed, &params), s3, reference),
        MethodRow::new("appendix", appendix(&params), s3, reference),
    ];

    let mut table = Table::new(&["method", "s0_final", "p1_final", "p2_final", "abs_err_s0", "rel_err_s0"]);
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for row in &rows {
        table.row([
            row.method.to_string(),
            opt(row.s0_final),
            opt(row.p1_final),
            opt(row.p2_final),
            opt(row.abs_err_s0),
            opt(row.rel_err_s0),
        ]);
    }
    let report = json!({
        "command": "compare",
        "scenario": r,
        "setup": Setup { drive: drive_json(&params), integration: opts, initial, initial_stokes: s_in },
        "methods": rows,
        "diagnostics": traj.diagnostics,
        "exceptional_points": exceptional_points(&params),
    });
    let mut b = Bundle::default();
    b.add("numeric.csv", trajectory_csv(&traj));
    if let Ok((pw, _)) = &piecewise {
        b.add("piecewise.csv", trajectory_csv(pw));
    }
    b.add("compare.csv", table.finish());
    b.add("compare.json", json(&report));
    Ok(b)
}

fn surface(params: &DriveParams) -> Option<SurfaceClass> {
    match params.coeffs() {
        [_, b] if *b != 0.0 => classify_parabolic(params).ok(),
        [_, b, c] if *b == 0.0 && *c != 0.0 => classify_superparabolic(params).ok(),
        _ => None,
    }
}

pub fn eps(r: &Resolved) -> Result<Value, CliError> {
    let params = r.drive()?;
    let set = exceptional_points(&params);
    Ok(json!({
        "drive": drive_json(&params),
        "ep_count": set.count(),
        "first_transition_point": first_transition_point(&set).ok(),
        "critical_surface": surface(&params),
        "ep_set": set,
    }))
}

/// Series and quadrature forms of the parabolic tail integral and of the
/// closed-form `S0(∞)`; disagreement beyond `tol` is a numeric failure.
pub fn appendix_check(r: &Resolved, tol: f64) -> Result<Value, CliError> {
    let params = r.drive()?;
    if params.degree() != 2 {
        return Err(CliError::Config("appendix-check needs a parabolic drive (alpha, beta)".into()));
    }
    let fail = |e: String| numeric(e, json!({ "drive": drive_json(&params) }));
    let ing = two_ep_ingredients(&params).map_err(|e| fail(e.to_string()))?;
    let series = i2_series(&params, ing.t2, &SeriesControl::default()).map_err(|e| fail(e.to_string()))?;
    let quadrature = oscillatory_tails(&params, ing.t2).map_err(|e| fail(e.to_string()))?;
    let i1 = hyperbolic_moment(&params, ing.t1, ing.t2).map_err(|e| fail(e.to_string()))?;
    let s0_appendix = s0_infinity_parabolic_appendix(&params).map_err(|e| fail(e.to_string()))?;
    let s0_generic = ing.simple();
    let d_re = (series.re - quadrature.re).abs();
    let d_im = (series.im - quadrature.im).abs();
    let d_s0 = (s0_appendix - s0_generic).abs();
    let report = json!({
        "drive": drive_json(&params),
        "t1": ing.t1,
        "t2": ing.t2,
        "i1": i1,
        "i2_series": [series.re, series.im],
        "i2_quadrature": [quadrature.re, quadrature.im],
        "i2_abs_diff": [d_re, d_im],
        "s0_appendix": s0_appendix,
        "s0_generic": s0_generic,
        "s0_abs_diff": d_s0,
        "tolerance": tol,
        "agree": d_re <= tol && d_im <= tol && d_s0 <= tol,
    });
    if report["agree"] != Value::Bool(true) {
        return Err(numeric("appendix forms disagree beyond tolerance", report));
    }
    Ok(report)
}

pub fn lattice_map(r: &Resolved) -> Result<Value, CliError> {
    let spec = r.lattice()?;
    let lat = spec.params()?;
    let (params, offset) = spec.effective()?;
    let lerr = |e: nhlz::lattice::LatticeError| CliError::Config(format!("lattice: {e}"));
    let thresholds = ep_count_from_lattice(&lat, spec.expansion).ok();
    let generic = ep_count_generic(&lat, spec.expansion).map_err(lerr)?;
    let constant = match spec.expansion {
        Expansion::ZoneCenter => Some(effective_parabolic(&lat).map_err(lerr)?.1),
        Expansion::BandEdge => None,
    };
    Ok(json!({
        "lattice": lat,
        "expansion": spec.expansion,
        "effective_drive": drive_json(&params),
        "time_offset": offset,
        "removed_constant": constant,
        "ep_count_thresholds": thresholds,
        "ep_count_generic": generic,
        "counts_agree": thresholds.map(|t| t == generic),
        "ep_set": exceptional_points(&params),
    }))
}

pub fn lattice_run(r: &Resolved) -> Result<Bundle, CliError> {
    let spec = r.lattice()?;
    let lat = spec.params()?;
    let t_end = spec.run_length()?;
    let opts = spec.options(&r.scenario.integration);
    let components = r.lattice_components()?;
    let a0 = gaussian_wavepacket(&lat, components);
    let run = propagate_lattice(&lat, &a0, t_end, &opts)
        .map_err(|e| numeric(e.to_string(), json!({ "lattice": lat, "options": opts })))?;
    let (params, offset) = spec.effective()?;
    let norms = run.norms();
    let band = run.band_populations();
    let summary = json!({
        "command": "lattice-run",
        "scenario": r,
        "lattice": lat,
        "options": opts,
        "effective_drive": drive_json(&params),
        "time_offset": offset,
        "initial_components": [components.0, components.1],
        "final_norm": norms.last(),
        "final_mean_position": run.mean_positions().last(),
        "final_band_populations": band.last(),
        "finals": transmission(&run.projected),
        "diagnostics": run.projected.diagnostics,
    });
    let mut b = Bundle::default();
    b.add("lattice.csv", lattice_csv(&run));
    b.add("projected.csv", trajectory_csv(&run.projected));
    b.add("summary.json", json(&summary));
    Ok(b)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub values: Vec<f64>,
    pub ep_count: Option<usize>,
    pub surface_count: Option<usize>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub s0_ratio: Option<f64>,
    pub status: String,
}

fn sweep_cell(r: &Resolved, base: &DriveParams, names: &[AxisName], values: Vec<f64>, index: u64, finals: bool) -> SweepCell {
    let mut coeffs = base.coeffs().to_vec();
    coeffs.resize(coeffs.len().max(3), 0.0);
    let mut coupling = base.coupling();
    for (name, &v) in names.iter().zip(&values) {
        match name {
            AxisName::Alpha => coeffs[0] = v,
            AxisName::Beta => coeffs[1] = v,
            AxisName::Gamma3 => coeffs[2] = v,
            AxisName::Coupling => coupling = v,
        }
    }
    while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    let mut cell = SweepCell { values, ep_count: None, surface_count: None, p1: None, p2: None, s0_ratio: None, status: "ok".into() };
    let Ok(params) = DriveParams::new(coeffs, coupling) else {
        cell.status = "invalid-drive".into();
        return cell;
    };
    cell.ep_count = Some(exceptional_points(&params).count());
    cell.surface_count = surface(&params).map(|s| s.ep_count);
    if !finals {
        return cell;
    }
    let opts = r.integration_options(&params);
    let run = r
        .initial_state(&params, opts.t_start, index)
        .and_then(|init| run_two_level(&params, &init, &opts));
    match run {
        Ok(traj) => {
            let f = transmission(&traj).expect("non-empty trajectory");
            cell.p1 = Some(f.p1_final);
            cell.p2 = Some(f.p2_final);
            cell.s0_ratio = Some(f.s0_final / traj.stokes[0].s0);
        }
        Err(CliError::Numeric { message, .. }) if message.contains("overflow") => cell.status = "overflow".into(),
        Err(CliError::Numeric { .. }) => cell.status = "numeric-failure".into(),
        Err(_) => cell.status = "invalid-setup".into(),
    }
    cell
}

pub fn sweep(r: &Resolved) -> Result<Bundle, CliError> {
    let spec = r.scenario.sweep.as_ref().ok_or_else(|| CliError::Config("sweep needs a [sweep] table".into()))?;
    let base = r.drive()?;
    let names: Vec<AxisName> = spec.axes.iter().map(|a| a.name).collect();
    let grids: Vec<Vec<f64>> = spec.axes.iter().map(|a| a.values()).collect();
    let points: Vec<Vec<f64>> = match grids.as_slice() {
        [a] => a.iter().map(|&x| vec![x]).collect(),
        [a, b] => a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect(),
        _ => unreachable!("validated axis count"),
    };
    let cells: Vec<SweepCell> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, values)| sweep_cell(r, &base, &names, values, i as u64, spec.finals))
        .collect();

    let mut header: Vec<String> = names
        .iter()
        .map(|n| serde_json::to_value(n).expect("plain enum").as_str().expect("string").to_string())
        .collect();
    header.extend(["ep_count", "surface_count", "p1", "p2", "s0_ratio", "status"].map(String::from));
    let mut table = Table::new(&header);
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let count = |x: Option<usize>| x.map(|c| c.to_string()).unwrap_or_default();
    for c in &cells {
        let mut row: Vec<String> = c.values.iter().map(|&v| num(v)).collect();
        row.extend([count(c.ep_count), count(c.surface_count), opt(c.p1), opt(c.p2), opt(c.s0_ratio), c.status.clone()]);
        table.row(row);
    }
    let disagreements = cells
        .iter()
        .filter(|c| matches!((c.ep_count, c.surface_count), (Some(a), Some(b)) if a != b))
        .count();
    let summary = json!({
        "command": "sweep",
        "scenario": r,
        "cells": cells.len(),
        "classification_disagreements": disagreements,
        "failed_cells": cells.iter().filter(|c| c.status != "ok").count(),
    });
    let mut b = Bundle::default();
    b.add("sweep.csv", table.finish());
    b.add("summary.json", json(&summary));
    Ok(b)
}
