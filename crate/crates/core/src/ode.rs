//! Dormand–Prince 5(4) with PI step-size control and a fourth-order
//! continuous extension, generic over real and complex state vectors.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step limit {max_steps} reached at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

/// Field element the stepper can integrate.
pub trait Scalar: Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn modulus(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rel_tol: 1e-8, abs_tol: 1e-10, max_step: f64::INFINITY, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeOutput<T> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
    pub stats: OdeStats,
    /// Time of the last accepted step when the stop predicate fired.
    pub stopped_at: Option<f64>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn axpy<T: Scalar>(out: &mut [T], y: &[T], terms: &[(f64, &[T])]) {
    for i in 0..out.len() {
        let mut acc = y[i];
        for &(c, k) in terms {
            acc = acc + k[i] * c;
        }
        out[i] = acc;
    }
}

/// Dense-output coefficients for the last accepted step.
struct Dense<T> {
    t_old: f64,
    h: f64,
    r: [Vec<T>; 5],
}

impl<T: Scalar> Dense<T> {
    fn eval(&self, t: f64, out: &mut [T]) {
        let th = (t - self.t_old) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + (r2[i] + (r3[i] + (r4[i] + r5[i] * th1) * th) * th1) * th;
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction),
/// reporting the state at each of `samples`, which must be ordered in the
/// direction of integration and lie within `[t0, t_end]`.
///
/// `stop` is checked after every accepted step; when it returns true the
/// run ends and the last accepted state is appended as the final sample.
pub fn integrate<T, F, S>(
    mut f: F,
    t0: f64,
    y0: &[T],
    t_end: f64,
    samples: &[f64],
    opts: &OdeOptions,
    mut stop: S,
) -> Result<OdeOutput<T>, OdeError>
where
    T: Scalar,
    F: FnMut(f64, &[T], &mut [T]),
    S: FnMut(f64, &[T]) -> bool,
{
    if !(opts.rel_tol > 0.0 && opts.abs_tol >= 0.0 && opts.max_step > 0.0) {
        return Err(OdeError::InvalidOptions(format!("{opts:?}")));
    }
    if !(t0.is_finite() && t_end.is_finite()) {
        return Err(OdeError::InvalidOptions("non-finite time span".into()));
    }
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let n = y0.len();
    let mut out = OdeOutput { times: Vec::new(), states: Vec::new(), stats: OdeStats::default(), stopped_at: None };
    let mut next_sample = 0;
    while next_sample < samples.len() && (samples[next_sample] - t0) * dir <= 0.0 {
        out.times.push(samples[next_sample]);
        out.states.push(y0.to_vec());
        next_sample += 1;
    }
    if t_end == t0 {
        return Ok(out);
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![T::default(); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut k5 = k1.clone();
    let mut k6 = k1.clone();
    let mut k7 = k1.clone();
    let mut ytmp = k1.clone();
    let mut ynew = k1.clone();
    let mut dense = Dense { t_old: t0, h: 1.0, r: [k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone()] };

    f(t, &y, &mut k1);
    out.stats.evaluations += 1;

    let sk = |a: T, b: T| opts.abs_tol + opts.rel_tol * a.modulus().max(b.modulus());
    let hmax = opts.max_step.min((t_end - t0).abs());

    // Initial step guess from the local scale of y, y' and y''.
    let mut h = {
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..n {
            let s = opts.abs_tol + opts.rel_tol * y[i].modulus();
            dnf += (k1[i].modulus() / s).powi(2);
            dny += (y[i].modulus() / s).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(hmax);
        axpy(&mut ytmp, &y, &[(h * dir, &k1)]);
        f(t + h * dir, &ytmp, &mut k2);
        out.stats.evaluations += 1;
        let mut der2: f64 = 0.0;
        for i in 0..n {
            let s = opts.abs_tol + opts.rel_tol * y[i].modulus();
            der2 += ((k2[i] - k1[i]).modulus() / s).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1).min(hmax)
    };

    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let span = (t_end - t0).abs();
    loop {
        if out.stats.accepted + out.stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps { t, max_steps: opts.max_steps });
        }
        let remaining = (t_end - t).abs();
        let mut last = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            last = true;
        }
        if h <= 1e-14 * t.abs().max(span).max(1.0) {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }
        let hs = h * dir;

        axpy(&mut ytmp, &y, &[(hs * A21, &k1)]);
        f(t + C2 * hs, &ytmp, &mut k2);
        axpy(&mut ytmp, &y, &[(hs * A31, &k1), (hs * A32, &k2)]);
        f(t + C3 * hs, &ytmp, &mut k3);
        axpy(&mut ytmp, &y, &[(hs * A41, &k1), (hs * A42, &k2), (hs * A43, &k3)]);
        f(t + C4 * hs, &ytmp, &mut k4);
        axpy(&mut ytmp, &y, &[(hs * A51, &k1), (hs * A52, &k2), (hs * A53, &k3), (hs * A54, &k4)]);
        f(t + C5 * hs, &ytmp, &mut k5);
        axpy(&mut ytmp, &y, &[(hs * A61, &k1), (hs * A62, &k2), (hs * A63, &k3), (hs * A64, &k4), (hs * A65, &k5)]);
        let t_new = if last { t_end } else { t + hs };
        f(t_new, &ytmp, &mut k6);
        axpy(&mut ynew, &y, &[(hs * A71, &k1), (hs * A73, &k3), (hs * A74, &k4), (hs * A75, &k5), (hs * A76, &k6)]);
        f(t_new, &ynew, &mut k7);
        out.stats.evaluations += 6;

        let mut err = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * hs;
            finite &= ynew[i].is_finite() && e.is_finite();
            err += (e.modulus() / sk(y[i], ynew[i])).powi(2);
        }
        let err = if finite { (err / n.max(1) as f64).sqrt() } else { f64::INFINITY };

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut hnew = h / fac;
            facold = err.max(1e-4);
            out.stats.accepted += 1;

            let [r1, r2, r3, r4, r5] = &mut dense.r;
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = k1[i] * hs - ydiff;
                r1[i] = y[i];
                r2[i] = ydiff;
                r3[i] = bspl;
                r4[i] = ydiff - k7[i] * hs - bspl;
                r5[i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * hs;
            }
            dense.t_old = t;
            dense.h = hs;

            while next_sample < samples.len() && (samples[next_sample] - t_new) * dir <= 0.0 {
                let ts = samples[next_sample];
                let mut ys = vec![T::default(); n];
                if ts == t_new {
                    ys.copy_from_slice(&ynew);
                } else {
                    dense.eval(ts, &mut ys);
                }
                out.times.push(ts);
                out.states.push(ys);
                next_sample += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);

            if stop(t, &y) {
                out.stopped_at = Some(t);
                if out.times.last() != Some(&t) {
                    out.times.push(t);
                    out.states.push(y.clone());
                }
                return Ok(out);
            }
            if last {
                return Ok(out);
            }
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew.min(hmax);
        } else {
            if !finite && !(y.iter().all(|v| v.is_finite())) {
                return Err(OdeError::NonFinite { t });
            }
            let shrink = if finite { (fac11 / SAFE).min(1.0 / FAC_MIN) } else { 1.0 / FAC_MIN };
            h /= shrink;
            last_rejected = true;
            out.stats.rejected += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(tol: f64) -> OdeOptions {
        OdeOptions { rel_tol: tol, abs_tol: tol * 1e-2, ..Default::default() }
    }

    #[test]
    fn exponential_decay() {
        let out = integrate(|_, y: &[f64], dy| dy[0] = -y[0], 0.0, &[1.0], 5.0, &[1.0, 5.0], &opts(1e-10), |_, _| false)
            .unwrap();
        assert_eq!(out.times, vec![1.0, 5.0]);
        assert!((out.states[0][0] - (-1f64).exp()).abs() < 1e-10);
        assert!((out.states[1][0] - (-5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn complex_rotation_and_dense_output() {
        let i = Complex64::new(0.0, 1.0);
        let samples: Vec<f64> = (0..=100).map(|k| k as f64 * 0.2).collect();
        let out = integrate(
            |_, y: &[Complex64], dy| dy[0] = i * y[0],
            0.0,
            &[Complex64::new(1.0, 0.0)],
            20.0,
            &samples,
            &opts(1e-10),
            |_, _| false,
        )
        .unwrap();
        assert_eq!(out.times.len(), 101);
        for (t, y) in out.times.iter().zip(&out.states) {
            assert!((y[0] - (i * *t).exp()).norm() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn backward_integration() {
        let out =
            integrate(|t, _: &[f64], dy| dy[0] = 3.0 * t * t, 2.0, &[8.0], -1.0, &[0.0, -1.0], &opts(1e-10), |_, _| false)
                .unwrap();
        assert!((out.states[0][0]).abs() < 1e-10);
        assert!((out.states[1][0] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn samples_at_start_are_initial_state() {
        let out = integrate(|_, _: &[f64], dy| dy[0] = 1.0, 0.0, &[2.0], 1.0, &[0.0, 1.0], &opts(1e-8), |_, _| false)
            .unwrap();
        assert_eq!(out.states[0][0], 2.0);
        assert!((out.states[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn error_shrinks_with_tolerance() {
        let run = |tol| {
            let out = integrate(
                |t, y: &[f64], dy| {
                    dy[0] = y[1];
                    dy[1] = -(1.0 + t * t) * y[0];
                },
                0.0,
                &[1.0, 0.0],
                8.0,
                &[8.0],
                &opts(tol),
                |_, _| false,
            )
            .unwrap();
            out.states[0][0]
        };
        let reference = run(1e-13);
        let e1 = (run(1e-6) - reference).abs();
        let e2 = (run(1e-9) - reference).abs();
        assert!(e2 < e1 / 50.0, "e1={e1} e2={e2}");
    }

    #[test]
    fn stop_predicate_reports_last_valid_state() {
        let out = integrate(|_, y: &[f64], dy| dy[0] = y[0], 0.0, &[1.0], 1000.0, &[1000.0], &opts(1e-8), |_, y| {
            y[0] > 1e100
        })
        .unwrap();
        let t = out.stopped_at.unwrap();
        assert!(t > 230.0 && t < 240.0);
        assert_eq!(*out.times.last().unwrap(), t);
        assert!(out.states.last().unwrap()[0].is_finite());
    }

    #[test]
    fn blow_up_is_an_error() {
        let r = integrate(|_, y: &[f64], dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, &[2.0], &opts(1e-8), |_, _| false);
        assert!(matches!(r, Err(OdeError::StepSizeUnderflow { .. }) | Err(OdeError::NonFinite { .. })), "{r:?}");
    }

    #[test]
    fn step_limit() {
        let o = OdeOptions { max_steps: 5, ..opts(1e-12) };
        let r = integrate(|t, _: &[f64], dy| dy[0] = (50.0 * t).cos(), 0.0, &[0.0], 100.0, &[], &o, |_, _| false);
        assert!(matches!(r, Err(OdeError::TooManySteps { .. })));
    }

    #[test]
    fn max_step_is_honoured() {
        let o = OdeOptions { max_step: 0.01, ..opts(1e-6) };
        let out = integrate(|_, _: &[f64], dy| dy[0] = 0.0, 0.0, &[0.0], 1.0, &[], &o, |_, _| false).unwrap();
        assert!(out.stats.accepted >= 100);
    }
}
