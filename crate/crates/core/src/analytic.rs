//! Piecewise analytic approximation of the Stokes dynamics.
//!
//! In a broken region the `−2vS2` term is dropped and `(S0, S1)` grow
//! hyperbolically; in an unbroken region the `2ΓS0` term is dropped and
//! `(S1, S2)` rotate by `Φ(t) = 2∫v`. A short transition region with
//! `v ≈ ±Γ` can be inserted before the first exceptional point. The pieces are
//! glued by copying the Stokes vector across each boundary.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eps::{exceptional_points, first_transition_point, Branch};
use crate::integrator::Trajectory;
use crate::model::{DriveParams, StokesVector};
use crate::quad::{integrate, wynn_epsilon, QuadError, QuadOptions};
use crate::specfun::hyperbolic_moments;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("t = {t} lies outside the region [{lo}, {hi}]")]
    OutsideInterval { t: f64, lo: f64, hi: f64 },
    #[error("the closed forms need exactly two exceptional points, found {0}")]
    WrongEpCount(usize),
    #[error("unsupported region topology: {0}")]
    UnsupportedTopology(String),
    #[error("oscillatory tail did not settle after {pieces} half-periods (last estimates {estimates:?})")]
    NonConvergent { pieces: usize, estimates: [f64; 3] },
    #[error("the drive vanishes at the start of the tail")]
    StationaryPhase,
    #[error("time grid must be nonempty, finite and increasing")]
    InvalidGrid,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// `Φ(t) = 2∫_{t_ref}^t v(s) ds` from the polynomial antiderivative.
pub fn phase_integral(params: &DriveParams, t_ref: f64, t: f64) -> f64 {
    let anti = params.poly().antiderivative();
    2.0 * (anti.eval(t) - anti.eval(t_ref))
}

fn check_inside(t: f64, lo: f64, hi: f64) -> Result<(), AnalyticError> {
    // NaN fails both comparisons and is rejected too.
    if t >= lo && t <= hi {
        Ok(())
    } else {
        Err(AnalyticError::OutsideInterval { t, lo, hi })
    }
}

/// Broken-region solution entered at `interval.0`.
pub fn broken_propagate(
    entry: &StokesVector,
    params: &DriveParams,
    interval: (f64, f64),
    t: f64,
) -> Result<StokesVector, AnalyticError> {
    let (t1, t2) = interval;
    check_inside(t, t1, t2)?;
    let a = 2.0 * params.coupling();
    let (ch, sh) = ((a * (t - t1)).cosh(), (a * (t - t1)).sinh());
    let (ms, mc) = hyperbolic_moments(&params.poly(), a, t1, t);
    Ok(StokesVector {
        s0: entry.s0 * ch + entry.s1 * sh,
        s1: entry.s0 * sh + entry.s1 * ch,
        s2: entry.s2 + 2.0 * entry.s0 * ms + 2.0 * entry.s1 * mc,
        s3: entry.s3,
    })
}

fn quad_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-13, max_intervals: 20_000 }
}

/// `∫_a^b e^{iΦ(s)} ds` with `Φ` referenced at `t_ref`, split so each piece
/// carries a bounded number of oscillations.
fn phase_exp_integral(params: &DriveParams, t_ref: f64, a: f64, b: f64) -> Result<Complex64, AnalyticError> {
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let anti = params.poly().antiderivative();
    let base = anti.eval(t_ref);
    let phi = |s: f64| 2.0 * (anti.eval(s) - base);
    let swing = (phi(b) - phi(a)).abs();
    let vmax = params.value(a).abs().max(params.value(b).abs()).max(params.value(0.5 * (a + b)).abs());
    let pieces = ((swing.max(2.0 * vmax * (b - a).abs()) / PI).ceil() as usize).clamp(1, 100_000);
    let h = (b - a) / pieces as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..pieces {
        let lo = a + j as f64 * h;
        let hi = if j + 1 == pieces { b } else { lo + h };
        total += integrate(|s: f64| Complex64::from_polar(1.0, phi(s)), lo, hi, &quad_opts())?.value;
    }
    Ok(total)
}

/// Unbroken-region solution entered at `interval.0`; `interval.1` may be
/// infinite but `t` must be finite.
pub fn unbroken_propagate(
    entry: &StokesVector,
    params: &DriveParams,
    interval: (f64, f64),
    t: f64,
) -> Result<StokesVector, AnalyticError> {
    let (t2, hi) = interval;
    check_inside(t, t2, hi)?;
    if !t.is_finite() {
        return Err(AnalyticError::OutsideInterval { t, lo: t2, hi });
    }
    let integral = if params.coupling() == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        phase_exp_integral(params, t2, t2, t)?
    };
    Ok(rotate(entry, params, phase_integral(params, t2, t), integral))
}

fn rotate(entry: &StokesVector, params: &DriveParams, phi: f64, integral: Complex64) -> StokesVector {
    let g = params.coupling();
    let (s, c) = phi.sin_cos();
    StokesVector {
        s0: entry.s0 + 2.0 * g * entry.s1 * integral.re - 2.0 * g * entry.s2 * integral.im,
        s1: entry.s1 * c - entry.s2 * s,
        s2: entry.s1 * s + entry.s2 * c,
        s3: entry.s3,
    }
}

/// Transition-region solution with `v` frozen at `branch.sign()·Γ`, entered
/// at `t0`. `S0 − branch.sign()·S2` is conserved and `Ṡ1` is constant, so the
/// populations are quadratic in the elapsed time `t − t0`.
pub fn transition_propagate(
    entry: &StokesVector,
    coupling: f64,
    branch: Branch,
    interval: (f64, f64),
    t: f64,
) -> Result<StokesVector, AnalyticError> {
    let (t0, t1) = interval;
    check_inside(t, t0, t1)?;
    let l = branch.sign();
    let g = coupling;
    let tau = t - t0;
    let k = entry.s0 - l * entry.s2;
    let growth = 2.0 * g * entry.s1 * tau + 2.0 * g * g * k * tau * tau;
    Ok(StokesVector {
        s0: entry.s0 + growth,
        s1: entry.s1 + 2.0 * g * k * tau,
        s2: entry.s2 + l * growth,
        s3: entry.s3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailKind {
    Cos,
    Sin,
}

/// `∫_{t2}^∞ cos Φ` or `∫_{t2}^∞ sin Φ`, `Φ(t) = 2∫_{t2}^t v`.
///
/// The axis is cut at the zeros of the integrand, giving an alternating
/// series of half-period integrals whose partial sums are accelerated with
/// Wynn's epsilon algorithm. Stops when three successive accelerated sums
/// agree to 1e-9.
pub fn oscillatory_tail(params: &DriveParams, t2: f64, kind: TailKind) -> Result<f64, AnalyticError> {
    const MAX_PIECES: usize = 4000;
    const AGREE: f64 = 1e-9;
    let s = params.value(t2).signum();
    if params.value(t2) == 0.0 {
        return Err(AnalyticError::StationaryPhase);
    }
    let anti = params.poly().antiderivative();
    let base = anti.eval(t2);
    // Signed phase, increasing along the tail.
    let phase = |t: f64| 2.0 * s * (anti.eval(t) - base);
    let rate = |t: f64| 2.0 * s * params.value(t);
    let f = |t: f64| match kind {
        TailKind::Cos => (s * phase(t)).cos(),
        TailKind::Sin => (s * phase(t)).sin(),
    };
    let offset = match kind {
        TailKind::Cos => 0.5 * PI,
        TailKind::Sin => PI,
    };

    let mut partial = Vec::with_capacity(256);
    let mut estimates: Vec<f64> = Vec::new();
    let mut a = t2;
    let mut sum = 0.0;
    for n in 0..MAX_PIECES {
        let target = offset + n as f64 * PI;
        let b = solve_phase(&phase, &rate, a, target);
        sum += integrate(f, a, b, &quad_opts())?.value;
        partial.push(sum);
        a = b;
        if partial.len() >= 6 {
            let window = &partial[partial.len().saturating_sub(24)..];
            estimates.push(wynn_epsilon(window));
            let m = estimates.len();
            if m >= 3 {
                let (e0, e1, e2) = (estimates[m - 3], estimates[m - 2], estimates[m - 1]);
                if (e2 - e1).abs() < AGREE && (e1 - e0).abs() < AGREE {
                    return Ok(e2);
                }
            }
        }
    }
    let m = estimates.len();
    Err(AnalyticError::NonConvergent {
        pieces: MAX_PIECES,
        estimates: [estimates[m - 3], estimates[m - 2], estimates[m - 1]],
    })
}

/// Both tail integrals as `∫_{t2}^∞ e^{iΦ}`.
pub fn oscillatory_tails(params: &DriveParams, t2: f64) -> Result<Complex64, AnalyticError> {
    Ok(Complex64::new(
        oscillatory_tail(params, t2, TailKind::Cos)?,
        oscillatory_tail(params, t2, TailKind::Sin)?,
    ))
}

/// Smallest `t > a` with `phase(t) = target`, for increasing `phase`.
fn solve_phase(phase: &impl Fn(f64) -> f64, rate: &impl Fn(f64) -> f64, a: f64, target: f64) -> f64 {
    let mut lo = a;
    let mut step = ((target - phase(a)) / rate(a).max(1e-300)).clamp(1e-12, 1.0);
    let mut hi = a + step;
    while phase(hi) < target {
        lo = hi;
        step *= 2.0;
        hi = lo + step;
    }
    let mut t = hi;
    for _ in 0..200 {
        let g = phase(t) - target;
        if g == 0.0 {
            return t;
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - g / rate(t);
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    t
}

/// Everything the two-EP closed forms need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoEpIngredients {
    pub coupling: f64,
    /// Transition point before `t1`, when one exists.
    pub t0: Option<f64>,
    pub t1: f64,
    pub t2: f64,
    /// Branch of the first EP: `v(t1) = branch.sign()·Γ`.
    pub entry_branch: Branch,
    /// `∫_{t1}^{t2} v sinh(2Γ(t−t1))`.
    pub moment_sinh: f64,
    /// `∫_{t1}^{t2} v cosh(2Γ(t−t1))`.
    pub moment_cosh: f64,
    /// `∫_{t2}^∞ e^{iΦ}`.
    pub tail: Complex64,
}

impl TwoEpIngredients {
    /// `S0(∞)` from the state entering the broken region at `t1`.
    pub fn s0_from_entry(&self, entry: &StokesVector) -> f64 {
        let g = self.coupling;
        let a = 2.0 * g * (self.t2 - self.t1);
        let (ch, sh) = (a.cosh(), a.sinh());
        let s0 = entry.s0 * ch + entry.s1 * sh;
        let s1 = entry.s0 * sh + entry.s1 * ch;
        let s2 = entry.s2 + 2.0 * entry.s0 * self.moment_sinh + 2.0 * entry.s1 * self.moment_cosh;
        s0 + 2.0 * g * s1 * self.tail.re - 2.0 * g * s2 * self.tail.im
    }

    /// The simple two-EP formula, starting from `(S0, S1, S2) = (1, 0, 0)`.
    pub fn simple(&self) -> f64 {
        let g = self.coupling;
        let a = 2.0 * g * (self.t2 - self.t1);
        a.cosh() + 2.0 * g * a.sinh() * self.tail.re - 4.0 * g * self.moment_sinh * self.tail.im
    }

    /// Elapsed time spent in the transition region, zero without one.
    pub fn transition_length(&self) -> f64 {
        self.t0.map_or(0.0, |t0| self.t1 - t0)
    }

    /// The modified formula with the transition-region prefactors in terms
    /// of the elapsed time `τ = t1 − t0` and `ℓ = sign v(t1)/Γ`:
    ///
    /// ```text
    /// (1+2Γ²τ²)cosh + 2Γτ sinh
    ///  + 2Γ[(1+2Γ²τ²)sinh + 2Γτ cosh]·C
    ///  − 4Γ[(1+2Γ²τ²)I_s + ℓΓ²τ² + 2Γτ I_c]·S
    /// ```
    pub fn modified(&self) -> f64 {
        let g = self.coupling;
        let tau = self.transition_length();
        let l = self.entry_branch.sign();
        let a = 2.0 * g * (self.t2 - self.t1);
        let (ch, sh) = (a.cosh(), a.sinh());
        let p = 1.0 + 2.0 * g * g * tau * tau;
        let q = 2.0 * g * tau;
        p * ch + q * sh + 2.0 * g * (p * sh + q * ch) * self.tail.re
            - 4.0 * g * (p * self.moment_sinh + l * g * g * tau * tau + q * self.moment_cosh) * self.tail.im
    }

    /// The modified formula read literally, with the bare time `t1` in the
    /// prefactors:
    ///
    /// ```text
    /// (1+2Γ²t1²)cosh − 2Γt1 sinh
    ///  + 2Γ[(1+2Γ²t1²)sinh − 2Γt1 cosh]·C
    ///  − 4Γ[(1+2Γ²t1²)I_s − Γ²t1² + 2Γt1 I_c]·S
    /// ```
    ///
    /// It depends on the time origin and gives `S1(t1)` opposite signs in its
    /// first and last terms; kept for comparison.
    pub fn modified_printed(&self) -> f64 {
        let g = self.coupling;
        let t1 = self.t1;
        let a = 2.0 * g * (self.t2 - self.t1);
        let (ch, sh) = (a.cosh(), a.sinh());
        let p = 1.0 + 2.0 * g * g * t1 * t1;
        let q = 2.0 * g * t1;
        p * ch - q * sh + 2.0 * g * (p * sh - q * ch) * self.tail.re
            - 4.0 * g * (p * self.moment_sinh - g * g * t1 * t1 + q * self.moment_cosh) * self.tail.im
    }

    /// The modified formula rebuilt by composing the region solutions: a
    /// transition region of length `t1 − t0` entered at `(1, 0, 0)`, then the
    /// broken region and the unbroken tail.
    pub fn composed(&self) -> f64 {
        let start = StokesVector::new(1.0, 0.0, 0.0, 1.0);
        let entry = match self.t0 {
            Some(t0) => transition_propagate(&start, self.coupling, self.entry_branch, (t0, self.t1), self.t1)
                .expect("t1 closes the transition region"),
            None => start,
        };
        self.s0_from_entry(&entry)
    }
}

/// Collects `t0, t1, t2`, the hyperbolic moments and the tail integrals.
pub fn two_ep_ingredients(params: &DriveParams) -> Result<TwoEpIngredients, AnalyticError> {
    let eps = exceptional_points(params);
    if eps.count() != 2 || eps.switching().len() != 2 {
        return Err(AnalyticError::WrongEpCount(eps.count()));
    }
    let (e1, e2) = (eps.ep_times[0], eps.ep_times[1]);
    let a = 2.0 * params.coupling();
    let (moment_sinh, moment_cosh) = hyperbolic_moments(&params.poly(), a, e1.time, e2.time);
    Ok(TwoEpIngredients {
        coupling: params.coupling(),
        t0: first_transition_point(&eps).ok(),
        t1: e1.time,
        t2: e2.time,
        entry_branch: e1.branch,
        moment_sinh,
        moment_cosh,
        tail: oscillatory_tails(params, e2.time)?,
    })
}

/// Simple two-EP estimate of `S0(∞)` from `(S0, S1, S2) = (1, 0, 0)`.
/// Without coupling the formula is identically 1.
pub fn s0_infinity_simple(params: &DriveParams) -> Result<f64, AnalyticError> {
    if params.coupling() == 0.0 {
        return Ok(1.0);
    }
    Ok(two_ep_ingredients(params)?.simple())
}

/// Modified two-EP estimate with the transition-region correction.
pub fn s0_infinity_modified(params: &DriveParams) -> Result<f64, AnalyticError> {
    if params.coupling() == 0.0 {
        return Ok(1.0);
    }
    Ok(two_ep_ingredients(params)?.modified())
}

/// The modified estimate with the bare-time prefactors.
pub fn s0_infinity_modified_printed(params: &DriveParams) -> Result<f64, AnalyticError> {
    if params.coupling() == 0.0 {
        return Ok(1.0);
    }
    Ok(two_ep_ingredients(params)?.modified_printed())
}

/// Region kinds used by the glued solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Unbroken,
    Broken,
    Transition,
}

/// One glued piece: its interval, kind and entry value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSolution {
    pub interval: (f64, f64),
    pub kind: SegmentKind,
    pub entry_stokes: StokesVector,
    /// Frozen drive branch in a transition region.
    pub branch: Branch,
}

impl RegionSolution {
    pub fn evaluate(&self, params: &DriveParams, t: f64) -> Result<StokesVector, AnalyticError> {
        match self.kind {
            SegmentKind::Unbroken => unbroken_propagate(&self.entry_stokes, params, self.interval, t),
            SegmentKind::Broken => broken_propagate(&self.entry_stokes, params, self.interval, t),
            SegmentKind::Transition => {
                transition_propagate(&self.entry_stokes, params.coupling(), self.branch, self.interval, t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PiecewiseOptions {
    /// Also insert a transition region after the last EP.
    pub post_transition: bool,
    /// Skip the transition region before the first EP.
    pub no_entry_transition: bool,
}

/// Region layout over `[t_start, t_end]` as `(lo, hi, kind, branch)`.
fn layout(params: &DriveParams, t_start: f64, t_end: f64, opts: &PiecewiseOptions) -> Result<Vec<(f64, f64, SegmentKind, Branch)>, AnalyticError> {
    let eps = exceptional_points(params);
    if let Some(ep) = eps.ep_times.iter().find(|e| !e.switches_region()) {
        return Err(AnalyticError::UnsupportedTopology(format!(
            "tangential exceptional point at t = {} joins neighbouring regions",
            ep.time
        )));
    }
    let mut cuts: Vec<(f64, SegmentKind, Branch)> = Vec::new();
    let eps_list = &eps.ep_times;
    if let Some(first) = eps_list.first() {
        if !opts.no_entry_transition {
            if let Ok(t0) = first_transition_point(&eps) {
                cuts.push((t0, SegmentKind::Transition, first.branch));
            }
        }
    }
    for (i, ep) in eps_list.iter().enumerate() {
        let kind = if i % 2 == 0 { SegmentKind::Broken } else { SegmentKind::Unbroken };
        cuts.push((ep.time, kind, ep.branch));
    }
    if opts.post_transition {
        if let Some(last) = eps_list.last() {
            if let Some(&tp) = eps.transition_times.iter().find(|&&t| t > last.time) {
                // Re-label the final unbroken start as a transition region.
                cuts.last_mut().expect("nonempty").1 = SegmentKind::Transition;
                cuts.push((tp, SegmentKind::Unbroken, last.branch));
            }
        }
    }
    let mut segs = Vec::new();
    let mut lo = f64::NEG_INFINITY;
    let mut kind = SegmentKind::Unbroken;
    let mut branch = Branch::Minus;
    for (t, next_kind, next_branch) in cuts.into_iter().chain(std::iter::once((f64::INFINITY, SegmentKind::Unbroken, Branch::Minus))) {
        let a = lo.max(t_start);
        let b = t.min(t_end);
        if b > a {
            segs.push((a, b, kind, branch));
        }
        lo = t;
        kind = next_kind;
        branch = next_branch;
    }
    if segs.is_empty() {
        segs.push((t_start, t_end, SegmentKind::Unbroken, Branch::Minus));
    }
    Ok(segs)
}

/// Glues the region solutions over `t_grid`, starting from `initial` at
/// `t_grid[0]`, and samples them on the grid. Unbroken regions (including
/// the one before the first transition point) use the rotating solution with
/// `Φ` referenced at the region entry.
pub fn piecewise_trajectory(
    params: &DriveParams,
    initial: &StokesVector,
    t_grid: &[f64],
    opts: &PiecewiseOptions,
) -> Result<(Trajectory, Vec<RegionSolution>), AnalyticError> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalyticError::InvalidGrid);
    }
    let t_start = t_grid[0];
    let t_end = *t_grid.last().expect("nonempty");
    let segs = layout(params, t_start, t_end, opts)?;

    let mut out = Vec::with_capacity(t_grid.len());
    out.push(*initial);
    let mut regions = Vec::with_capacity(segs.len());
    let mut entry = *initial;
    let mut idx = 1;
    for (lo, hi, kind, branch) in segs {
        let region = RegionSolution { interval: (lo, hi), kind, entry_stokes: entry, branch };
        regions.push(region);
        // Running phase integral so unbroken regions cost one pass.
        let mut acc = Complex64::new(0.0, 0.0);
        let mut prev = lo;
        let sample = |t: f64, acc: &mut Complex64, prev: &mut f64| -> Result<StokesVector, AnalyticError> {
            match kind {
                SegmentKind::Unbroken => {
                    if params.coupling() != 0.0 {
                        *acc += phase_exp_integral(params, lo, *prev, t)?;
                    }
                    *prev = t;
                    Ok(rotate(&entry, params, phase_integral(params, lo, t), *acc))
                }
                _ => region.evaluate(params, t),
            }
        };
        while idx < t_grid.len() && t_grid[idx] <= hi {
            let s = sample(t_grid[idx], &mut acc, &mut prev)?;
            out.push(s);
            idx += 1;
        }
        entry = sample(hi, &mut acc, &mut prev)?;
    }
    Ok((Trajectory::from_stokes(t_grid.to_vec(), out), regions))
}
