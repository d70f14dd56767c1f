//! Numerical integration of the amplitude, Stokes and second-order
//! equations of motion. This is the reference the analytic formulas are
//! measured against.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eps::exceptional_points;
use crate::model::{spectral, stokes_from_state, unnormalized_eigenvector, DriveParams, ModelError, StokesVector, TwoLevelState, C64};
use crate::ode::{self, OdeError, OdeOptions};
use crate::poly::{find_real_roots, Poly};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Total population at which integration stops and reports overflow.
pub const OVERFLOW_S0: f64 = 1e100;

/// Largest accumulated phase `|Φ|` a default window may span on each side.
pub const PHASE_BUDGET: f64 = 4000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("t = {t} lies in the broken region (|v| = {v_abs} <= Γ = {coupling})")]
    BrokenRegion { t: f64, v_abs: f64, coupling: f64 },
    #[error("invalid integration options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Amplitudes,
    Stokes,
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub t_start: f64,
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub representation: Representation,
    pub sample_count: usize,
}

impl IntegrationOptions {
    pub fn new(t_start: f64, t_end: f64) -> Self {
        IntegrationOptions {
            t_start,
            t_end,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            representation: Representation::Amplitudes,
            sample_count: 1001,
        }
    }

    pub fn with_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = rel_tol * 1e-2;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.sample_count = n;
        self
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        let bad = |m: &str| Err(IntegratorError::InvalidOptions(m.to_string()));
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return bad("need finite t_start < t_end");
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return bad("rel_tol must lie in (0, 1e-2]");
        }
        if !(self.abs_tol > 0.0 && self.abs_tol <= 1e-2) {
            return bad("abs_tol must lie in (0, 1e-2]");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if self.sample_count < 2 {
            return bad("sample_count must be at least 2");
        }
        Ok(())
    }

    /// Uniform sample grid including both ends.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.sample_count;
        let dt = (self.t_end - self.t_start) / (n - 1) as f64;
        (0..n)
            .map(|k| if k + 1 == n { self.t_end } else { self.t_start + dt * k as f64 })
            .collect()
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions { rel_tol: self.rel_tol, abs_tol: self.abs_tol, max_step: self.max_step, ..OdeOptions::default() }
    }
}

/// Run statistics and invariant monitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
    /// Time of the last valid sample when the run stopped on overflow.
    pub overflow_at: Option<f64>,
    pub max_s0: f64,
    /// `max |S3(t) - S3(t_start)|`.
    pub s3_drift: f64,
    /// `max |S0² - S1² - S2² - S3²| / S0²`.
    pub hyperboloid_drift: f64,
    /// `max |S0(t) - S0(t_start)|`, the norm drift.
    pub s0_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TwoLevelState>,
    pub stokes: Vec<StokesVector>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    /// Builds a trajectory from states, deriving Stokes vectors and
    /// transmission probabilities.
    pub fn from_states(times: Vec<f64>, states: Vec<TwoLevelState>) -> Self {
        let stokes: Vec<StokesVector> = states.iter().map(stokes_from_state).collect();
        Self::assemble(times, states, stokes)
    }

    /// Builds a trajectory from Stokes vectors, with states in the gauge
    /// where ψ2 is real.
    pub fn from_stokes(times: Vec<f64>, stokes: Vec<StokesVector>) -> Self {
        let states = stokes.iter().map(TwoLevelState::from_stokes).collect();
        Self::assemble(times, states, stokes)
    }

    fn assemble(times: Vec<f64>, states: Vec<TwoLevelState>, stokes: Vec<StokesVector>) -> Self {
        let p1: Vec<f64> = stokes.iter().map(StokesVector::p1).collect();
        let p2 = p1.iter().map(|p| 1.0 - p).collect();
        let mut t = Trajectory { times, states, stokes, p1, p2, diagnostics: Diagnostics::default() };
        t.refresh_monitors();
        t
    }

    fn refresh_monitors(&mut self) {
        let d = &mut self.diagnostics;
        let Some(first) = self.stokes.first().copied() else { return };
        d.max_s0 = 0.0;
        d.s3_drift = 0.0;
        d.hyperboloid_drift = 0.0;
        d.s0_drift = 0.0;
        for s in &self.stokes {
            d.max_s0 = d.max_s0.max(s.s0);
            d.s3_drift = d.s3_drift.max((s.s3 - first.s3).abs());
            d.hyperboloid_drift = d.hyperboloid_drift.max(s.hyperboloid_residual().abs() / (s.s0 * s.s0));
            d.s0_drift = d.s0_drift.max((s.s0 - first.s0).abs());
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Which instantaneous eigenvector to prepare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenBranch {
    Plus,
    Minus,
}

impl EigenBranch {
    /// The branch whose eigenvector is dominated by ψ2 (`level2`) or ψ1
    /// at drive value `v`. ψ2 dominates when `ε` has the sign of `v`.
    pub fn for_level(v: f64, level2: bool) -> Self {
        if (v >= 0.0) == level2 {
            EigenBranch::Plus
        } else {
            EigenBranch::Minus
        }
    }
}

/// Instantaneous right eigenvector at time `t`, scaled by `1/√|N²|` so that
/// `S3 = ±1` exactly and `S0 = |v|/|ε| → 1` far from the exceptional points.
/// The phase makes the dominant component real and positive.
pub fn prepare_eigenstate(params: &DriveParams, t: f64, which: EigenBranch) -> Result<TwoLevelState, IntegratorError> {
    let v = params.value(t);
    let g = params.coupling();
    if v.abs() <= g {
        return Err(IntegratorError::BrokenRegion { t, v_abs: v.abs(), coupling: g });
    }
    eigenstate_for_value(v, g, which)
}

/// [`prepare_eigenstate`] for a bare drive value `|v| > Γ`.
pub fn eigenstate_for_value(v: f64, g: f64, which: EigenBranch) -> Result<TwoLevelState, IntegratorError> {
    if !(v.abs() > g) {
        return Err(IntegratorError::BrokenRegion { t: f64::NAN, v_abs: v.abs(), coupling: g });
    }
    let sd = spectral(v, g)?;
    let eps = match which {
        EigenBranch::Plus => sd.eps_plus,
        EigenBranch::Minus => sd.eps_minus,
    };
    let (vec, n2) = unnormalized_eigenvector(v, g, eps);
    let scale = n2.norm().sqrt();
    let (a, b) = (vec[0] / scale, vec[1] / scale);
    let lead = if a.norm() >= b.norm() { a } else { b };
    let phase = lead.conj() / lead.norm();
    Ok(TwoLevelState::new(a * phase, b * phase))
}

/// The amplitude equations `ψ̇1 = Γψ2 + ivψ1`, `ψ̇2 = Γψ1 - ivψ2` in the
/// interaction picture `ψ1 = a1 e^{iΦ/2}`, `ψ2 = a2 e^{-iΦ/2}` with
/// `Φ = 2∫₀ᵗ v`. The fast diagonal rotation is then exact and the stepper
/// only resolves the coupling: `ȧ1 = Γ a2 e^{-iΦ}`, `ȧ2 = Γ a1 e^{iΦ}`.
struct Frame {
    phi: Poly,
    coupling: f64,
}

impl Frame {
    fn new(params: &DriveParams) -> Self {
        Frame { phi: params.poly().antiderivative().scale(2.0), coupling: params.coupling() }
    }

    fn rotation(&self, t: f64) -> C64 {
        C64::from_polar(1.0, 0.5 * self.phi.eval(t))
    }

    fn to_frame(&self, t: f64, s: &TwoLevelState) -> [C64; 2] {
        let r = self.rotation(t);
        [s.psi1 * r.conj(), s.psi2 * r]
    }

    fn from_frame(&self, t: f64, a: &[C64]) -> TwoLevelState {
        let r = self.rotation(t);
        TwoLevelState::new(a[0] * r, a[1] * r.conj())
    }

    fn rhs(&self) -> impl Fn(f64, &[Complex64], &mut [Complex64]) + '_ {
        move |t, a, da| {
            let e = C64::from_polar(self.coupling, self.phi.eval(t));
            da[0] = a[1] * e.conj();
            da[1] = a[0] * e;
        }
    }
}

fn overflow(y: &[Complex64]) -> bool {
    y[0].norm_sqr() + y[1].norm_sqr() > OVERFLOW_S0
}

/// Integrates the coupled amplitude equations, sampling on the uniform grid
/// of `opts`. No renormalisation is applied.
pub fn integrate_amplitudes(params: &DriveParams, initial: &TwoLevelState, opts: &IntegrationOptions) -> Result<Trajectory, IntegratorError> {
    opts.validate()?;
    integrate_amplitudes_at(params, initial, &opts.grid(), opts)
}

/// As `integrate_amplitudes`, sampling at the given increasing times
/// within `[t_start, t_end]`.
pub fn integrate_amplitudes_at(
    params: &DriveParams,
    initial: &TwoLevelState,
    times: &[f64],
    opts: &IntegrationOptions,
) -> Result<Trajectory, IntegratorError> {
    opts.validate()?;
    if initial.is_zero() {
        return Err(IntegratorError::InvalidOptions("initial state is zero".into()));
    }
    let frame = Frame::new(params);
    let y0 = frame.to_frame(opts.t_start, initial);
    let out = ode::integrate(frame.rhs(), opts.t_start, &y0, opts.t_end, times, &opts.ode(), |_, y| overflow(y))?;
    let states = out.times.iter().zip(&out.states).map(|(&t, y)| frame.from_frame(t, y)).collect();
    let mut traj = Trajectory::from_states(out.times, states);
    traj.diagnostics.accepted_steps = out.stats.accepted;
    traj.diagnostics.rejected_steps = out.stats.rejected;
    traj.diagnostics.evaluations = out.stats.evaluations;
    traj.diagnostics.overflow_at = out.stopped_at;
    Ok(traj)
}

/// Propagates a state from `t_from` to `t_to` (either direction).
pub fn propagate_state(
    params: &DriveParams,
    state: &TwoLevelState,
    t_from: f64,
    t_to: f64,
    rel_tol: f64,
) -> Result<TwoLevelState, IntegratorError> {
    let o = OdeOptions { rel_tol, abs_tol: rel_tol * 1e-2, ..OdeOptions::default() };
    let frame = Frame::new(params);
    let y0 = frame.to_frame(t_from, state);
    let out = ode::integrate(frame.rhs(), t_from, &y0, t_to, &[t_to], &o, |_, _| false)?;
    Ok(frame.from_frame(t_to, &out.states[0]))
}

/// Integrates `Ṡ0 = 2ΓS1`, `Ṡ1 = 2ΓS0 - 2vS2`, `Ṡ2 = 2vS1` with `S3` held at
/// its initial value.
///
/// With `z = S1 + iS2` the system reads `Ṡ0 = 2Γ Re z`, `ż = 2ΓS0 + 2ivz`;
/// the rotation is removed by `z = w e^{iΦ}`, leaving
/// `ẇ = 2ΓS0 e^{-iΦ}` for the stepper.
pub fn integrate_stokes(params: &DriveParams, initial: &StokesVector, opts: &IntegrationOptions) -> Result<Trajectory, IntegratorError> {
    opts.validate()?;
    let g = params.coupling();
    let phi = params.poly().antiderivative().scale(2.0);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let e = C64::from_polar(1.0, phi.eval(t));
        let z = C64::new(y[1], y[2]) * e;
        let dw = 2.0 * g * y[0] * e.conj();
        dy[0] = 2.0 * g * z.re;
        dy[1] = dw.re;
        dy[2] = dw.im;
    };
    let w0 = C64::new(initial.s1, initial.s2) * C64::from_polar(1.0, -phi.eval(opts.t_start));
    let y0 = [initial.s0, w0.re, w0.im];
    let out = ode::integrate(rhs, opts.t_start, &y0, opts.t_end, &opts.grid(), &opts.ode(), |_, y| y[0] > OVERFLOW_S0)?;
    let stokes = out
        .times
        .iter()
        .zip(&out.states)
        .map(|(&t, y)| {
            let z = C64::new(y[1], y[2]) * C64::from_polar(1.0, phi.eval(t));
            StokesVector::new(y[0], z.re, z.im, initial.s3)
        })
        .collect();
    let mut traj = Trajectory::from_stokes(out.times, stokes);
    traj.diagnostics.accepted_steps = out.stats.accepted;
    traj.diagnostics.rejected_steps = out.stats.rejected;
    traj.diagnostics.evaluations = out.stats.evaluations;
    traj.diagnostics.overflow_at = out.stopped_at;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    One,
    Two,
}

/// The bracket `v² - Γ² ∓ iv̇` in `ψ̈ + [ … ]ψ = 0` (upper sign for ψ1).
pub fn second_order_bracket(params: &DriveParams, level: Level, t: f64) -> C64 {
    let v = params.value(t);
    let g = params.coupling();
    let s = match level {
        Level::One => -1.0,
        Level::Two => 1.0,
    };
    C64::new(v * v - g * g, s * params.derivative(t))
}

/// Value and derivative of one amplitude, consistent with the coupled
/// first-order equations at time `t`.
pub fn second_order_seed(params: &DriveParams, level: Level, state: &TwoLevelState, t: f64) -> (C64, C64) {
    let g = params.coupling();
    let iv = I * params.value(t);
    match level {
        Level::One => (state.psi1, state.psi2 * g + iv * state.psi1),
        Level::Two => (state.psi2, state.psi1 * g - iv * state.psi2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub derivatives: Vec<C64>,
    pub diagnostics: Diagnostics,
}

/// Integrates the decoupled second-order equation for one amplitude.
pub fn integrate_second_order(
    params: &DriveParams,
    level: Level,
    value: C64,
    derivative: C64,
    opts: &IntegrationOptions,
) -> Result<ScalarTrajectory, IntegratorError> {
    opts.validate()?;
    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        dy[0] = y[1];
        dy[1] = -second_order_bracket(params, level, t) * y[0];
    };
    let out = ode::integrate(rhs, opts.t_start, &[value, derivative], opts.t_end, &opts.grid(), &opts.ode(), |_, y| {
        y[0].norm_sqr() > OVERFLOW_S0
    })?;
    Ok(ScalarTrajectory {
        values: out.states.iter().map(|y| y[0]).collect(),
        derivatives: out.states.iter().map(|y| y[1]).collect(),
        times: out.times,
        diagnostics: Diagnostics {
            accepted_steps: out.stats.accepted,
            rejected_steps: out.stats.rejected,
            evaluations: out.stats.evaluations,
            overflow_at: out.stopped_at,
            ..Diagnostics::default()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub p1_final: f64,
    pub p2_final: f64,
    pub s0_final: f64,
    /// Means over the last 10% of samples.
    pub p1_tail_mean: f64,
    pub p2_tail_mean: f64,
}

pub fn transmission(traj: &Trajectory) -> Option<Transmission> {
    let n = traj.len();
    if n == 0 {
        return None;
    }
    let tail = (n / 10).max(1);
    let p1_tail_mean = traj.p1[n - tail..].iter().sum::<f64>() / tail as f64;
    Some(Transmission {
        p1_final: traj.p1[n - 1],
        p2_final: traj.p2[n - 1],
        s0_final: traj.stokes[n - 1].s0,
        p1_tail_mean,
        p2_tail_mean: 1.0 - p1_tail_mean,
    })
}

/// Outermost root of `p` on the requested side of the origin.
fn outermost_root(p: &Poly, right: bool) -> Option<f64> {
    let roots = find_real_roots(p).ok()?;
    if right {
        roots.iter().map(|r| r.value).rfind(|&t| t > 0.0)
    } else {
        roots.iter().map(|r| r.value).find(|&t| t < 0.0)
    }
}

/// Default finite stand-in for `(-∞, ∞)`: on each side, the point beyond
/// which `overlap_g < 1e-4`, but at least five times the outermost EP,
/// and no further than where `|Φ|` reaches `PHASE_BUDGET`.
pub fn default_window(params: &DriveParams) -> (f64, f64) {
    let eps = exceptional_points(params);
    let t_ep = if eps.ep_times.is_empty() { 1.0 } else { 5.0 * eps.outermost() };
    let v = params.poly();
    let g = params.coupling();
    let phi = v.antiderivative().scale(2.0);
    let side = |right: bool| {
        let t_g = if g > 0.0 {
            [1.0, -1.0]
                .iter()
                .filter_map(|s| outermost_root(&v.sub(&Poly::constant(s * 1e4 * g)), right))
                .map(f64::abs)
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let t_phase = [1.0, -1.0]
            .iter()
            .filter_map(|s| outermost_root(&phi.sub(&Poly::constant(s * PHASE_BUDGET)), right))
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min);
        t_ep.max(t_g).min(t_ep.max(t_phase))
    };
    (-side(false), side(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::relative_phase;

    fn lz_params() -> DriveParams {
        DriveParams::linear(1.0, 0.5).unwrap()
    }

    #[test]
    fn option_validation() {
        assert!(IntegrationOptions::new(1.0, 0.0).validate().is_err());
        assert!(IntegrationOptions::new(0.0, 1.0).with_tol(0.1).validate().is_err());
        assert!(IntegrationOptions::new(0.0, 1.0).with_samples(1).validate().is_err());
        assert!(IntegrationOptions::new(0.0, 1.0).validate().is_ok());
        let g = IntegrationOptions::new(-1.0, 1.0).with_samples(5).grid();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn eigenstate_examples() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        let v = p.value(-30.0);
        let s = prepare_eigenstate(&p, -30.0, EigenBranch::for_level(v, true)).unwrap();
        assert!(s.psi1.norm_sqr() < 1e-3);
        let st = stokes_from_state(&s);
        assert_eq!(st.s3, 1.0);
        let e = spectral(v, 1.0).unwrap();
        assert!((st.s0 - v.abs() / e.eps_plus.norm()).abs() < 1e-15);

        let p0 = DriveParams::linear(2.0, 0.0).unwrap();
        let s = prepare_eigenstate(&p0, -3.0, EigenBranch::for_level(-6.0, true)).unwrap();
        assert_eq!(s, TwoLevelState::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0)));
        let s = prepare_eigenstate(&p0, -3.0, EigenBranch::for_level(-6.0, false)).unwrap();
        assert_eq!(s, TwoLevelState::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0)));

        assert!(matches!(prepare_eigenstate(&p, 0.0, EigenBranch::Plus), Err(IntegratorError::BrokenRegion { .. })));
    }

    #[test]
    fn eigenstate_is_an_eigenvector() {
        let p = DriveParams::parabolic(1.0, 1.0, 1.0).unwrap();
        for &t in &[-5.0, -2.5, 1.5, 4.0] {
            for which in [EigenBranch::Plus, EigenBranch::Minus] {
                let s = prepare_eigenstate(&p, t, which).unwrap();
                let v = p.value(t);
                let sd = spectral(v, 1.0).unwrap();
                let eps = if which == EigenBranch::Plus { sd.eps_plus } else { sd.eps_minus };
                let h = crate::model::hamiltonian_matrix(v, 1.0);
                let r0 = h[0][0] * s.psi1 + h[0][1] * s.psi2 - eps * s.psi1;
                let r1 = h[1][0] * s.psi1 + h[1][1] * s.psi2 - eps * s.psi2;
                assert!(r0.norm() < 1e-13 && r1.norm() < 1e-13);
                assert!((stokes_from_state(&s).s3.abs() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn landau_zener_finals() {
        let p = lz_params();
        let init = prepare_eigenstate(&p, -60.0, EigenBranch::for_level(-60.0, true)).unwrap();
        let traj = integrate_amplitudes(&p, &init, &IntegrationOptions::new(-60.0, 60.0).with_tol(1e-10)).unwrap();
        let last = traj.states.last().unwrap();
        let x = (std::f64::consts::PI * 0.25).exp();
        assert!((last.psi1.norm_sqr() / (x - 1.0) - 1.0).abs() < 0.02);
        assert!((last.psi2.norm_sqr() / x - 1.0).abs() < 0.02);
        let tr = transmission(&traj).unwrap();
        assert!((tr.p2_tail_mean - x / (2.0 * x - 1.0)).abs() < 0.01);
    }

    #[test]
    fn hermitian_populations_are_constant() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 0.0).unwrap();
        let init = TwoLevelState::from_population(0.3, 0.7);
        let traj = integrate_amplitudes(&p, &init, &IntegrationOptions::new(-3.0, 3.0)).unwrap();
        for s in &traj.states {
            assert!((s.psi1.norm_sqr() - 0.3).abs() < 1e-12);
            assert!((s.psi2.norm_sqr() - 0.7).abs() < 1e-12);
        }
        assert!(traj.diagnostics.s0_drift < 1e-9);
    }

    #[test]
    fn s3_is_conserved_through_two_eps() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        let init = prepare_eigenstate(&p, -30.0, EigenBranch::for_level(-1.0, true)).unwrap();
        let traj = integrate_amplitudes(&p, &init, &IntegrationOptions::new(-30.0, 30.0).with_tol(1e-10)).unwrap();
        let d = traj.diagnostics;
        assert!(d.s3_drift <= 1e-8, "{d:?}");
        assert!(d.s3_drift <= 100.0 * 1e-10 * d.max_s0);
        assert!(d.hyperboloid_drift <= 1e-8);
        for (a, b) in traj.p1.iter().zip(&traj.p2) {
            assert!((a + b - 1.0).abs() < 1e-14 && (0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn stokes_constant_drive_closed_form() {
        // v ≡ 0 is not a valid drive; use a negligible slope.
        let p = DriveParams::linear(1e-300, 1.0).unwrap();
        let traj = integrate_stokes(&p, &StokesVector::new(1.0, 0.0, 0.0, 0.0), &IntegrationOptions::new(0.0, 2.0).with_samples(21))
            .unwrap();
        for (t, s) in traj.times.iter().zip(&traj.stokes) {
            assert!((s.s0 - (2.0 * t).cosh()).abs() < 1e-8 * (2.0 * t).cosh());
            assert!((s.s1 - (2.0 * t).sinh()).abs() < 1e-8 * (2.0 * t).cosh());
        }
    }

    #[test]
    fn stokes_hermitian_rotation() {
        let p = DriveParams::linear(1.0, 0.0).unwrap();
        let traj = integrate_stokes(&p, &StokesVector::new(1.0, 0.6, 0.0, 0.8), &IntegrationOptions::new(0.0, 3.0).with_samples(31))
            .unwrap();
        for (t, s) in traj.times.iter().zip(&traj.stokes) {
            // Φ = 2∫₀ᵗ s ds = t².
            assert!((s.s0 - 1.0).abs() < 1e-12);
            assert!((s.s1 - 0.6 * (t * t).cos()).abs() < 1e-8);
            assert!((s.s2 - 0.6 * (t * t).sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn stokes_and_amplitudes_agree() {
        let p = DriveParams::parabolic(1.0, 1.0, 1.0).unwrap();
        let init = TwoLevelState::from_population(0.2, 0.4);
        let o = IntegrationOptions::new(-6.0, 6.0).with_tol(1e-12).with_samples(121);
        let a = integrate_amplitudes(&p, &init, &o).unwrap();
        let s = integrate_stokes(&p, &stokes_from_state(&init), &o).unwrap();
        for (x, y) in a.stokes.iter().zip(&s.stokes) {
            let scale = x.s0.max(1.0);
            assert!((x.s0 - y.s0).abs() <= 1e-8 * scale);
            assert!((x.s1 - y.s1).abs() <= 1e-8 * scale);
            assert!((x.s2 - y.s2).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn second_order_agrees_with_first_order() {
        let p = DriveParams::parabolic(1.0, 1.0, 1.0).unwrap();
        let init = TwoLevelState::from_population(0.0, 0.0);
        let o = IntegrationOptions::new(-10.0, 10.0).with_tol(1e-12).with_samples(201);
        let a = integrate_amplitudes(&p, &init, &o).unwrap();
        for level in [Level::One, Level::Two] {
            let (v0, d0) = second_order_seed(&p, level, &init, -10.0);
            let s = integrate_second_order(&p, level, v0, d0, &o).unwrap();
            for (st, z) in a.states.iter().zip(&s.values) {
                let w = if level == Level::One { st.psi1 } else { st.psi2 };
                assert!((w - z).norm() <= 1e-7 * w.norm().max(1.0), "{level:?}");
            }
        }
    }

    #[test]
    fn second_order_coefficients() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        assert_eq!(second_order_bracket(&p, Level::One, 0.0), C64::new(-1.0, -1.0));
        assert_eq!(second_order_bracket(&p, Level::Two, 0.0), C64::new(-1.0, 1.0));
    }

    #[test]
    fn hermitian_weber_keeps_modulus() {
        // With Γ = 0 and ψ2 = 0, ψ1 = exp(iαt²/2) solves the equation.
        let p = DriveParams::linear(1.0, 0.0).unwrap();
        let init = TwoLevelState::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let (v0, d0) = second_order_seed(&p, Level::One, &init, -4.0);
        let s = integrate_second_order(&p, Level::One, v0, d0, &IntegrationOptions::new(-4.0, 4.0).with_tol(1e-11)).unwrap();
        for z in &s.values {
            assert!((z.norm() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        let init = TwoLevelState::from_population(0.4, 1.0);
        let fwd = propagate_state(&p, &init, -5.0, 5.0, 1e-12).unwrap();
        let back = propagate_state(&p, &fwd, 5.0, -5.0, 1e-12).unwrap();
        let err = ((back.psi1 - init.psi1).norm_sqr() + (back.psi2 - init.psi2).norm_sqr()).sqrt();
        assert!(err < 1e-6);
    }

    #[test]
    fn broken_region_growth_rate() {
        // Deep in the broken interval of a slow sweep d(log S0)/dt ≈ 2Γ.
        let p = DriveParams::linear(0.01, 1.0).unwrap();
        let init = TwoLevelState::from_population(0.5, 0.0);
        let traj = integrate_amplitudes(&p, &init, &IntegrationOptions::new(-5.0, 5.0).with_samples(101)).unwrap();
        for w in traj.stokes.windows(2).zip(traj.times.windows(2)) {
            let (s, t) = w;
            let rate = (s[1].s0.ln() - s[0].s0.ln()) / (t[1] - t[0]);
            assert!((0.0..=2.0 + 1e-6).contains(&rate));
        }
        let n = traj.len();
        let rate = (traj.stokes[n - 1].s0.ln() - traj.stokes[n - 2].s0.ln()) / (traj.times[n - 1] - traj.times[n - 2]);
        let v = p.value(traj.times[n - 1]);
        assert!((rate - 2.0 * (1.0 - v * v).sqrt()).abs() < 1e-3, "rate={rate}");
    }

    #[test]
    fn overflow_stops_and_reports() {
        let p = DriveParams::linear(1e-3, 1.0).unwrap();
        let init = TwoLevelState::from_population(0.5, 0.0);
        let traj = integrate_amplitudes(&p, &init, &IntegrationOptions::new(0.0, 400.0)).unwrap();
        let t = traj.diagnostics.overflow_at.expect("overflow");
        assert!(t < 400.0);
        assert_eq!(*traj.times.last().unwrap(), t);
        let tr = transmission(&traj).unwrap();
        assert!(tr.p1_final.is_finite() && (tr.p1_final + tr.p2_final - 1.0).abs() < 1e-12);
        assert!(relative_phase(traj.states.last().unwrap()).is_ok());
    }

    #[test]
    fn tolerance_convergence() {
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        let init = prepare_eigenstate(&p, -30.0, EigenBranch::for_level(-1.0, true)).unwrap();
        let p1 = |tol: f64| {
            let o = IntegrationOptions::new(-30.0, 30.0).with_tol(tol).with_samples(2);
            *integrate_amplitudes(&p, &init, &o).unwrap().p1.last().unwrap()
        };
        let (a, b, c) = (p1(1e-6), p1(1e-8), p1(1e-10));
        assert!((c - b).abs() < (b - a).abs());
    }

    #[test]
    fn default_windows() {
        let (lo, hi) = default_window(&lz_params());
        // Linear drive: phase budget t² = 4000.
        assert!((hi - 4000f64.sqrt()).abs() < 1e-9 && (lo + hi).abs() < 1e-9);
        let p = DriveParams::super_parabolic(1.0, 1.0, 1.0).unwrap();
        let (lo, hi) = default_window(&p);
        assert!(hi >= 5.0 * 0.68233 && (lo + hi).abs() < 1e-9);
        assert!(p.value(hi).abs() <= 1e4 + 1e-6);
        let (lo, hi) = default_window(&DriveParams::linear(1.0, 0.0).unwrap());
        assert!(lo < 0.0 && hi > 0.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn invariants_hold_on_random_runs(
                a in -2.0f64..2.0,
                c in -1.0f64..1.0,
                g in 0.1f64..1.5,
                p1 in 0.0f64..1.0,
                th in -3.0f64..3.0,
            ) {
                prop_assume!(a.abs() > 0.1);
                let p = DriveParams::new(vec![a, 0.0, c], g).unwrap();
                let tol = 1e-9;
                let o = IntegrationOptions::new(-4.0, 4.0).with_tol(tol).with_samples(81);
                let t = integrate_amplitudes(&p, &TwoLevelState::from_population(p1, th), &o).unwrap();
                let d = t.diagnostics;
                prop_assert!(d.s3_drift <= 100.0 * tol * d.max_s0, "{:?}", d);
                prop_assert!(d.hyperboloid_drift <= 1e-8);
                let s = integrate_stokes(&p, &t.stokes[0], &o.with_tol(1e-12)).unwrap();
                prop_assert!(s.diagnostics.hyperboloid_drift <= 1e-8);
            }
        }
    }
}
