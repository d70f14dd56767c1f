//! Special functions for the parabolic-drive closed forms: hyperbolic
//! moments of the drive, the gamma function, `₁F₁(1; b; z)`, generalized
//! Fresnel integrals `∫ x^m e^{ix³}` and the series for the oscillatory tail.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eps::{classify_parabolic, SurfaceSide};
use crate::model::DriveParams;
use crate::poly::Poly;

type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecfunError {
    #[error("drive degree {0} not supported here")]
    WrongDriveDegree(usize),
    #[error("series diverged after {terms} terms (largest term {largest:e})")]
    SeriesDivergence { terms: usize, largest: f64 },
    #[error("continued fraction did not converge for z = {0}")]
    NonConvergent(C64),
    #[error("parameters outside the two-EP parabolic regime")]
    WrongRegime,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Stopping rules for the slowly converging sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub abs_tol: f64,
    /// Abort once a term exceeds the first one by this factor; beyond it the
    /// cancellation eats the whole double-precision budget.
    pub ratio_guard: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl { max_terms: 200, abs_tol: 1e-16, ratio_guard: 1e8 }
    }
}

impl SeriesControl {
    fn validate(&self) -> Result<(), SpecfunError> {
        if self.max_terms == 0 || !(self.abs_tol > 0.0) || !(self.ratio_guard > 1.0) {
            return Err(SpecfunError::InvalidArgument("series control"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Hyperbolic moments

/// `(∫_{t1}^{t2} q(t) sinh(a(t−t1)) dt, ∫_{t1}^{t2} q(t) cosh(a(t−t1)) dt)`.
///
/// Repeated integration by parts terminates for polynomials; when `a·Δt` is
/// small the alternating sum cancels badly, so a Taylor expansion of the
/// hyperbolic factor is used instead.
pub fn hyperbolic_moments(q: &Poly, a: f64, t1: f64, t2: f64) -> (f64, f64) {
    let d = t2 - t1;
    let q = q.shifted(t1);
    if (a * d).abs() <= 1.0 {
        return taylor_moments(&q, a, d);
    }
    let mut ders = vec![q.clone()];
    while !ders.last().expect("nonempty").is_zero() {
        let next = ders.last().expect("nonempty").derivative();
        ders.push(next);
    }
    let (ch, sh) = ((a * d).cosh(), (a * d).sinh());
    let mut sinh_m = 0.0;
    let mut cosh_m = 0.0;
    let mut ak = a;
    for (k, p) in ders.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let (end, start) = (p.eval(d), p.eval(0.0));
        if k % 2 == 0 {
            sinh_m += sign * (end * ch - start) / ak;
            cosh_m += sign * end * sh / ak;
        } else {
            sinh_m += sign * end * sh / ak;
            cosh_m += sign * (end * ch - start) / ak;
        }
        ak *= a;
    }
    (sinh_m, cosh_m)
}

fn taylor_moments(q: &Poly, a: f64, d: f64) -> (f64, f64) {
    let mut sinh_m = 0.0;
    let mut cosh_m = 0.0;
    // a^n d^n / n!
    let mut w = 1.0;
    for n in 0..60 {
        let inner: f64 = q
            .coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| c * d.powi((i + 1) as i32) / (i + n + 1) as f64)
            .sum();
        let term = w * inner;
        if n % 2 == 0 {
            cosh_m += term;
        } else {
            sinh_m += term;
        }
        if n > 2 && term.abs() <= 1e-18 * (sinh_m.abs() + cosh_m.abs()) {
            break;
        }
        w *= a * d / (n + 1) as f64;
    }
    (sinh_m, cosh_m)
}

/// `I1 = ∫_{t1}^{t2} v(t) sinh(2Γ(t−t1)) dt` for drives up to cubic.
pub fn hyperbolic_moment(params: &DriveParams, t1: f64, t2: f64) -> Result<f64, SpecfunError> {
    if params.degree() > 3 {
        return Err(SpecfunError::WrongDriveDegree(params.degree()));
    }
    Ok(hyperbolic_moments(&params.poly(), 2.0 * params.coupling(), t1, t2).0)
}

// ---------------------------------------------------------------------------
// Gamma function

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) by the Lanczos approximation (g = 7) with reflection below 1/2.
pub fn gamma_fn(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_fn(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    // Split the power so large arguments do not overflow early.
    let half = t.powf(0.5 * (x + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * acc
}

// ---------------------------------------------------------------------------
// Confluent hypergeometric function with a = 1

/// `Γ(s, z)` by the Legendre continued fraction (modified Lentz).
pub fn upper_incomplete_gamma(s: f64, z: C64) -> Result<C64, SpecfunError> {
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0 - s;
    let mut c = C64::new(1.0 / TINY, 0.0);
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..20_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.norm() < TINY {
            d = C64::new(TINY, 0.0);
        }
        c = b + an / c;
        if c.norm() < TINY {
            c = C64::new(TINY, 0.0);
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            return Ok((-z).exp() * (s * z.ln()).exp() * h);
        }
    }
    Err(SpecfunError::NonConvergent(z))
}

/// Sums `Σ term_k` with `term_{k+1} = term_k · ratio(k)` under the guard.
fn guarded_sum(first: C64, mut ratio: impl FnMut(usize) -> C64, ctrl: &SeriesControl) -> Result<C64, SpecfunError> {
    let mut term = first;
    let mut sum = first;
    let scale = first.norm().max(f64::MIN_POSITIVE);
    let mut largest = scale;
    for k in 0..ctrl.max_terms.max(1) {
        term *= ratio(k);
        sum += term;
        let t = term.norm();
        largest = largest.max(t);
        if largest > ctrl.ratio_guard * scale {
            return Err(SpecfunError::SeriesDivergence { terms: k + 2, largest });
        }
        if t <= ctrl.abs_tol * sum.norm().max(f64::MIN_POSITIVE) || t == 0.0 {
            return Ok(sum);
        }
    }
    Err(SpecfunError::SeriesDivergence { terms: ctrl.max_terms, largest })
}

fn taylor_control() -> SeriesControl {
    SeriesControl { max_terms: 2000, abs_tol: 1e-17, ratio_guard: 1e12 }
}

/// `₁F₁(1; b; z) = Σ z^k / (b)_k`.
///
/// The Taylor series is used while it is well conditioned. Near the
/// negative real axis the Kummer transform `e^z ₁F₁(b−1; b; −z)` takes over;
/// elsewhere the incomplete-gamma representation
/// `(b−1) z^{1−b} e^z [Γ(b−1) − Γ(b−1, z)]` is used.
pub fn confluent_1f1_b(z: C64, b: f64) -> Result<C64, SpecfunError> {
    if !(b > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(SpecfunError::InvalidArgument("1F1 requires b > 0 and finite z"));
    }
    let r = z.norm();
    if r == 0.0 {
        return Ok(C64::new(1.0, 0.0));
    }
    if b == 1.0 {
        return Ok(z.exp());
    }
    if r <= 10.0 || r < 0.5 * b {
        return guarded_sum(C64::new(1.0, 0.0), |k| z / (b + k as f64), &taylor_control());
    }
    if z.re < 0.0 && z.im.abs() <= 0.25 * z.re.abs() {
        return Ok(z.exp() * confluent_1f1_a_ap1(b - 1.0, -z)?);
    }
    let s = b - 1.0;
    let upper = upper_incomplete_gamma(s, z)?;
    Ok(s * ((1.0 - b) * z.ln()).exp() * z.exp() * (gamma_fn(s) - upper))
}

/// `₁F₁(a; a+1; z) = Σ a/(a+k) · z^k/k!`, summed directly.
pub fn confluent_1f1_a_ap1(a: f64, z: C64) -> Result<C64, SpecfunError> {
    if !(a > 0.0) {
        return Err(SpecfunError::InvalidArgument("1F1(a; a+1; z) requires a > 0"));
    }
    // Carry z^k/k! and apply the a/(a+k) weight per term.
    let mut p = C64::new(1.0, 0.0);
    let mut sum = p;
    let ctrl = taylor_control();
    let mut largest = 1.0_f64;
    for k in 1..ctrl.max_terms {
        p *= z / k as f64;
        let term = p * (a / (a + k as f64));
        sum += term;
        largest = largest.max(term.norm());
        if k as f64 > z.norm() && term.norm() <= ctrl.abs_tol * sum.norm() {
            // Growth is fine; cancellation against the largest term is not.
            if largest > ctrl.ratio_guard * sum.norm() {
                return Err(SpecfunError::SeriesDivergence { terms: k + 1, largest });
            }
            return Ok(sum);
        }
    }
    Err(SpecfunError::SeriesDivergence { terms: ctrl.max_terms, largest })
}

// ---------------------------------------------------------------------------
// Generalized Fresnel integrals

/// `∫_{x_lo}^∞ x^m e^{ix³} dx`, regularized (Abel sense) for `m ≥ 2`:
/// `(1/3)Γ((m+1)/3) e^{iπ(m+1)/6} − x_lo^{m+1}/(m+1) · e^{ix³} ₁F₁(1; (m+4)/3; −ix³)`.
pub fn generalized_fresnel(m: u32, x_lo: f64) -> Result<C64, SpecfunError> {
    if !x_lo.is_finite() {
        return Err(SpecfunError::InvalidArgument("x_lo must be finite"));
    }
    let a = (m as f64 + 1.0) / 3.0;
    let full = gamma_fn(a) / 3.0 * C64::from_polar(1.0, PI * a / 2.0);
    Ok(full - fresnel_lower(m, x_lo)?)
}

/// `∫_0^{x} t^m e^{it³} dt`.
fn fresnel_lower(m: u32, x: f64) -> Result<C64, SpecfunError> {
    if x == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let x3 = x * x * x;
    let b = (m as f64 + 4.0) / 3.0;
    let lead = x.powi(m as i32 + 1) / (m as f64 + 1.0);
    Ok(lead * C64::from_polar(1.0, x3) * confluent_1f1_b(-I * x3, b)?)
}

// ---------------------------------------------------------------------------
// Oscillatory tail of the parabolic drive

/// Pieces of the tail series: `I2 = prefactor · sum`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct I2Parts {
    pub prefactor: C64,
    pub sum: C64,
    pub lambda: f64,
    pub x2: f64,
    pub terms: usize,
}

impl I2Parts {
    pub fn value(&self) -> C64 {
        self.prefactor * self.sum
    }
}

/// The series form of `∫_{t2}^∞ e^{iΦ(t)} dt`, `Φ(t) = 2∫_{t2}^t v`, for a
/// parabolic drive with `β > 0`. Completing the square with `k = α/2β`,
/// `x = (2β/3)^{1/3}(t + k)` turns `Φ` into `x³ − λx` up to a constant and the
/// linear term is expanded in powers of `λ`.
pub fn i2_parts(params: &DriveParams, t2: f64, ctrl: &SeriesControl) -> Result<I2Parts, SpecfunError> {
    ctrl.validate()?;
    let (alpha, beta) = (params.alpha(), params.beta());
    if params.degree() != 2 || beta <= 0.0 {
        return Err(SpecfunError::WrongDriveDegree(params.degree()));
    }
    let k = alpha / (2.0 * beta);
    let c = (2.0 * beta / 3.0).cbrt();
    let x2 = c * (t2 + k);
    let lambda = 3.0 * k * k * c * c;
    let prefactor = C64::from_polar(1.0 / c, -(x2 * x2 * x2 - lambda * x2));

    let mut coeff = C64::new(1.0, 0.0);
    let mut sum = generalized_fresnel(0, x2)?;
    let first = sum.norm().max(f64::MIN_POSITIVE);
    let mut largest = first;
    let mut small_run = 0;
    for m in 1..ctrl.max_terms {
        coeff *= -I * lambda / m as f64;
        if coeff.norm() == 0.0 {
            return Ok(I2Parts { prefactor, sum, lambda, x2, terms: m });
        }
        let term = coeff * generalized_fresnel(m as u32, x2)?;
        sum += term;
        let t = term.norm();
        largest = largest.max(t);
        if largest > ctrl.ratio_guard * first {
            return Err(SpecfunError::SeriesDivergence { terms: m + 1, largest });
        }
        // Two consecutive negligible terms: the remaining tail decays factorially.
        small_run = if t <= ctrl.abs_tol * sum.norm().max(1.0) { small_run + 1 } else { 0 };
        if small_run >= 2 {
            return Ok(I2Parts { prefactor, sum, lambda, x2, terms: m + 1 });
        }
    }
    Err(SpecfunError::SeriesDivergence { terms: ctrl.max_terms, largest })
}

/// `I2 = ∫_{t2}^∞ e^{iΦ(t)} dt`. Negative `β` is handled through `v → −v`,
/// which conjugates the integrand.
pub fn i2_series(params: &DriveParams, t2: f64, ctrl: &SeriesControl) -> Result<C64, SpecfunError> {
    if params.degree() != 2 {
        return Err(SpecfunError::WrongDriveDegree(params.degree()));
    }
    if params.beta() < 0.0 {
        return Ok(i2_parts(&params.negated(), t2, ctrl)?.value().conj());
    }
    Ok(i2_parts(params, t2, ctrl)?.value())
}

/// Closed-form `S0(∞)` for `v = αt + βt²` in the two-EP regime
/// (`α⁴ < 16Γ²β²`), starting from `(S0, S1, S2) = (1, 0, 0)`.
///
/// With `D = √(α² + 4|β|Γ)`, `Δt = D/|β|` and `s = sign β`:
/// `I1 = (s/2 + β/4Γ³)(cosh 2ΓΔt − 1) − (sD/4Γ²) sinh 2ΓΔt` and
/// `S0 = cosh 2ΓΔt + 2Γ sinh(2ΓΔt) Re I2 − 4Γ I1 Im I2`.
pub fn s0_infinity_parabolic_appendix(params: &DriveParams) -> Result<f64, SpecfunError> {
    if params.degree() != 2 {
        return Err(SpecfunError::WrongDriveDegree(params.degree()));
    }
    let g = params.coupling();
    if g == 0.0 {
        return Ok(1.0);
    }
    let class = classify_parabolic(params).map_err(|_| SpecfunError::WrongRegime)?;
    if class.side != SurfaceSide::BelowCritical {
        return Err(SpecfunError::WrongRegime);
    }
    let (alpha, beta) = (params.alpha(), params.beta());
    let s = beta.signum();
    let d = (alpha * alpha + 4.0 * beta.abs() * g).sqrt();
    let dt = d / beta.abs();
    // Larger root of v = sΓ.
    let t2 = (-alpha + s * d) / (2.0 * beta);
    let arg = 2.0 * g * dt;
    let (ch, sh) = (arg.cosh(), arg.sinh());
    let i1 = (0.5 * s + beta / (4.0 * g * g * g)) * (ch - 1.0) - s * d / (4.0 * g * g) * sh;
    let i2 = i2_series(params, t2, &SeriesControl::default())?;
    Ok(ch + 2.0 * g * sh * i2.re - 4.0 * g * i1 * i2.im)
}
