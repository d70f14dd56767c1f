//! The PT-symmetric two-level Hamiltonian `[[-v, iΓ], [iΓ, v]]`, its
//! biorthogonal spectral data, and the Stokes-variable picture of its states.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Poly;

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coupling must be finite and non-negative, got {0}")]
    InvalidCoupling(f64),
    #[error("drive needs at least one finite nonzero coefficient")]
    InvalidDrive,
    #[error("exceptional point: |v| = {v_abs} is within tolerance of Γ = {coupling}")]
    ExceptionalPoint { v_abs: f64, coupling: f64 },
    #[error("relative phase undefined: an amplitude vanishes")]
    UndefinedPhase,
    #[error("operation needs a drive of degree {expected}, got degree {got}")]
    WrongDriveDegree { expected: usize, got: usize },
    #[error("linear coefficient α must be nonzero for this reduction")]
    DegenerateAlpha,
}

/// Polynomial drive `v(t) = Σ c_k t^k` (no constant term) and constant coupling Γ.
///
/// The coupling is allowed to be zero so that the Hermitian limit can be
/// exercised; every other operation treats `Γ = 0` as the decoupled case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    coeffs: Vec<f64>,
    coupling: f64,
}

impl DriveParams {
    /// `coeffs[k]` multiplies `t^(k+1)`.
    pub fn new(coeffs: Vec<f64>, coupling: f64) -> Result<Self, ModelError> {
        if !coupling.is_finite() || coupling < 0.0 {
            return Err(ModelError::InvalidCoupling(coupling));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || coeffs.iter().all(|&c| c == 0.0) {
            return Err(ModelError::InvalidDrive);
        }
        let mut coeffs = coeffs;
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Ok(DriveParams { coeffs, coupling })
    }

    pub fn linear(alpha: f64, coupling: f64) -> Result<Self, ModelError> {
        Self::new(vec![alpha], coupling)
    }

    pub fn parabolic(alpha: f64, beta: f64, coupling: f64) -> Result<Self, ModelError> {
        Self::new(vec![alpha, beta], coupling)
    }

    pub fn super_parabolic(alpha: f64, gamma3: f64, coupling: f64) -> Result<Self, ModelError> {
        Self::new(vec![alpha, 0.0, gamma3], coupling)
    }

    pub fn with_coupling(&self, coupling: f64) -> Result<Self, ModelError> {
        Self::new(self.coeffs.clone(), coupling)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn alpha(&self) -> f64 {
        self.coeff(1)
    }

    pub fn beta(&self) -> f64 {
        self.coeff(2)
    }

    pub fn gamma3(&self) -> f64 {
        self.coeff(3)
    }

    /// Index of the highest nonzero coefficient.
    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// True when only odd powers appear, so `v(-t) = -v(t)`.
    pub fn is_odd(&self) -> bool {
        self.coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0)
    }

    /// The drive as a polynomial in `t`.
    pub fn poly(&self) -> Poly {
        let mut c = Vec::with_capacity(self.coeffs.len() + 1);
        c.push(0.0);
        c.extend_from_slice(&self.coeffs);
        Poly::new(c)
    }

    /// `v(t)` by Horner's rule.
    pub fn value(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| (acc + c) * t)
    }

    /// `dv/dt`.
    pub fn derivative(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * t + (k + 1) as f64 * c)
    }

    /// `d²v/dt²`.
    pub fn second_derivative(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * t + ((k + 1) * k) as f64 * c)
    }

    /// The drive with `t -> -t`.
    pub fn time_reversed(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| if k % 2 == 0 { -c } else { c })
            .collect();
        DriveParams { coeffs, coupling: self.coupling }
    }

    /// The drive with `v -> -v`.
    pub fn negated(&self) -> Self {
        DriveParams { coeffs: self.coeffs.iter().map(|c| -c).collect(), coupling: self.coupling }
    }
}

/// Diabatic amplitudes `(ψ1, ψ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelState {
    pub psi1: C64,
    pub psi2: C64,
}

impl TwoLevelState {
    pub fn new(psi1: C64, psi2: C64) -> Self {
        TwoLevelState { psi1, psi2 }
    }

    /// `|ψ1|² = p1`, `|ψ2|² = 1 - p1`, `arg ψ1 - arg ψ2 = theta`.
    pub fn from_population(p1: f64, theta: f64) -> Self {
        let p1 = p1.clamp(0.0, 1.0);
        TwoLevelState { psi1: C64::from_polar(p1.sqrt(), theta), psi2: C64::new((1.0 - p1).sqrt(), 0.0) }
    }

    /// A state with the given Stokes vector, in the gauge where ψ2 is real
    /// and non-negative. Approximate (off-hyperboloid) vectors keep their
    /// level populations and relative phase.
    pub fn from_stokes(s: &StokesVector) -> Self {
        let n1 = (0.5 * (s.s0 - s.s3)).max(0.0).sqrt();
        let n2 = (0.5 * (s.s0 + s.s3)).max(0.0).sqrt();
        let theta = if s.s1 == 0.0 && s.s2 == 0.0 { 0.0 } else { s.s2.atan2(s.s1) };
        TwoLevelState { psi1: C64::from_polar(n1, theta), psi2: C64::new(n2, 0.0) }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.psi1.norm_sqr() + self.psi2.norm_sqr()
    }

    pub fn is_zero(&self) -> bool {
        self.psi1 == C64::new(0.0, 0.0) && self.psi2 == C64::new(0.0, 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        TwoLevelState { psi1: self.psi1 * s, psi2: self.psi2 * s }
    }

    pub fn swapped(&self) -> Self {
        TwoLevelState { psi1: self.psi2, psi2: self.psi1 }
    }
}

/// Real Stokes quadruple; physical states live on `S0² - S1² - S2² = S3²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s0, s1, s2, s3 }
    }

    /// `S0² - S1² - S2² - S3²`, zero for vectors built from a state.
    pub fn hyperboloid_residual(&self) -> f64 {
        self.s0 * self.s0 - self.s1 * self.s1 - self.s2 * self.s2 - self.s3 * self.s3
    }

    pub fn is_physical(&self) -> bool {
        self.s0 > 0.0 && self.s0 >= self.s3.abs()
    }

    /// `P1 = |ψ1|² / S0`.
    pub fn p1(&self) -> f64 {
        0.5 * (self.s0 - self.s3) / self.s0
    }

    pub fn p2(&self) -> f64 {
        0.5 * (self.s0 + self.s3) / self.s0
    }
}

/// Stokes variables of a state.
pub fn stokes_from_state(state: &TwoLevelState) -> StokesVector {
    let n1 = state.psi1.norm_sqr();
    let n2 = state.psi2.norm_sqr();
    // ψ2* ψ1 carries both off-diagonal bilinears.
    let c = state.psi2.conj() * state.psi1;
    StokesVector { s0: n1 + n2, s1: 2.0 * c.re, s2: 2.0 * c.im, s3: n2 - n1 }
}

/// `arg ψ1 - arg ψ2`, wrapped to `(-π, π]`.
pub fn relative_phase(state: &TwoLevelState) -> Result<f64, ModelError> {
    if state.psi1.norm_sqr() == 0.0 || state.psi2.norm_sqr() == 0.0 {
        return Err(ModelError::UndefinedPhase);
    }
    let theta = (state.psi2.conj() * state.psi1).arg();
    Ok(if theta <= -PI { theta + 2.0 * PI } else { theta })
}

/// A 2×2 complex matrix in row-major order.
pub type Matrix2 = [[C64; 2]; 2];

pub fn hamiltonian_matrix(v: f64, coupling: f64) -> Matrix2 {
    [
        [C64::new(-v, 0.0), I * coupling],
        [I * coupling, C64::new(v, 0.0)],
    ]
}

/// The PT image `conj(P H P)` with parity `P = σz`, the parity under which
/// `H(v, Γ)` is invariant.
pub fn pt_transform(m: &Matrix2) -> Matrix2 {
    [
        [m[0][0].conj(), -m[0][1].conj()],
        [-m[1][0].conj(), m[1][1].conj()],
    ]
}

/// `conj(σx H σx)`. `H(v, Γ)` is anti-symmetric under this map.
pub fn swap_conjugate(m: &Matrix2) -> Matrix2 {
    [
        [m[1][1].conj(), m[1][0].conj()],
        [m[0][1].conj(), m[0][0].conj()],
    ]
}

pub fn matrix_norm(m: &Matrix2) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `ε - Γ` proximity below which `spectral` reports an exceptional point.
pub fn ep_tolerance(coupling: f64) -> f64 {
    1e-10 * coupling.max(1.0)
}

/// Eigenvalues, right eigenvectors `φ±`, and left eigenvectors `χ±` with
/// `χ±ᵀ φ± = 1` and `χ±ᵀ φ∓ = 0` (bilinear, unconjugated pairing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralData {
    pub eps_plus: C64,
    pub eps_minus: C64,
    pub phi_plus: [C64; 2],
    pub phi_minus: [C64; 2],
    pub chi_plus: [C64; 2],
    pub chi_minus: [C64; 2],
    pub n_plus: C64,
    pub n_minus: C64,
}

fn bilinear(a: &[C64; 2], b: &[C64; 2]) -> C64 {
    a[0] * b[0] + a[1] * b[1]
}

impl SpectralData {
    /// `χᵀ φ` for the four left/right pairings, `[[++, +-], [-+, --]]`.
    pub fn pairings(&self) -> [[C64; 2]; 2] {
        [
            [bilinear(&self.chi_plus, &self.phi_plus), bilinear(&self.chi_plus, &self.phi_minus)],
            [bilinear(&self.chi_minus, &self.phi_plus), bilinear(&self.chi_minus, &self.phi_minus)],
        ]
    }

    /// `ε₊ φ₊ χ₊ᵀ + ε₋ φ₋ χ₋ᵀ`.
    pub fn reconstruct(&self) -> Matrix2 {
        let mut m = [[C64::new(0.0, 0.0); 2]; 2];
        for (eps, phi, chi) in [
            (self.eps_plus, &self.phi_plus, &self.chi_plus),
            (self.eps_minus, &self.phi_minus, &self.chi_minus),
        ] {
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += eps * phi[r] * chi[c];
                }
            }
        }
        m
    }

    /// Frobenius condition number of the eigenvector matrix `[φ₊ φ₋]`.
    /// Diverges as the eigenvectors coalesce at an exceptional point.
    pub fn eigenvector_condition(&self) -> f64 {
        let (a, b) = (self.phi_plus[0], self.phi_minus[0]);
        let (c, d) = (self.phi_plus[1], self.phi_minus[1]);
        let det = a * d - b * c;
        let fro = (a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr()).sqrt();
        fro * fro / det.norm()
    }
}

/// Instantaneous spectrum of `H(v, Γ)`.
///
/// `ε₊` is the root with non-negative real part (ties broken by
/// non-negative imaginary part). Each eigenvector is written either as
/// `(iΓ, v + ε)` or the parallel form `(ε - v, iΓ)`, whichever has the
/// larger bilinear norm, so the Hermitian limit `Γ = 0` stays finite.
pub fn spectral(v: f64, coupling: f64) -> Result<SpectralData, ModelError> {
    if (v.abs() - coupling).abs() < ep_tolerance(coupling) {
        return Err(ModelError::ExceptionalPoint { v_abs: v.abs(), coupling });
    }
    let disc = v * v - coupling * coupling;
    let eps_plus = if disc >= 0.0 { C64::new(disc.sqrt(), 0.0) } else { C64::new(0.0, (-disc).sqrt()) };
    let eps_minus = -eps_plus;

    let eig = |eps: C64| -> ([C64; 2], C64) {
        let (vec, n2) = unnormalized_eigenvector(v, coupling, eps);
        let n = n2.sqrt();
        ([vec[0] / n, vec[1] / n], n)
    };
    let (phi_plus, n_plus) = eig(eps_plus);
    let (phi_minus, n_minus) = eig(eps_minus);
    Ok(SpectralData {
        eps_plus,
        eps_minus,
        phi_plus,
        phi_minus,
        chi_plus: phi_plus,
        chi_minus: phi_minus,
        n_plus,
        n_minus,
    })
}

/// Right eigenvector for eigenvalue `eps` before normalisation, with its
/// bilinear square norm `N²`. Chooses between the parallel forms
/// `(iΓ, v + ε)` and `(ε - v, iΓ)` by the larger `|N²|`.
pub fn unnormalized_eigenvector(v: f64, coupling: f64, eps: C64) -> ([C64; 2], C64) {
    let g = I * coupling;
    let vc = C64::new(v, 0.0);
    let na2 = 2.0 * eps * (vc + eps);
    let nb2 = 2.0 * eps * (eps - vc);
    if na2.norm() >= nb2.norm() {
        ([g, vc + eps], na2)
    } else {
        ([eps - vc, g], nb2)
    }
}

/// Normalised overlap of the two right eigenvectors: `Γ/|v|` in the
/// unbroken region, `|v|/Γ` in the broken one, 1 at the exceptional point.
pub fn overlap_g(v: f64, coupling: f64) -> f64 {
    let a = v.abs();
    if a == 0.0 && coupling == 0.0 {
        return 0.0;
    }
    if a >= coupling {
        coupling / a
    } else {
        a / coupling
    }
}

/// Coefficients of the tri-confluent canonical form reached from the
/// parabolic drive, together with the variable maps used to get there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriconfluentForm {
    pub mu: C64,
    pub nu: C64,
    pub xi: C64,
    /// `τ = t + shift`.
    pub shift: f64,
    /// `z = scale · τ`.
    pub scale: C64,
}

/// `μ = -Γ²`, `ν = -√(6iβ)`, `ξ = -iα²/(2β)`, principal square roots.
pub fn triconfluent_heun_coefficients(params: &DriveParams) -> Result<TriconfluentForm, ModelError> {
    if params.degree() != 2 {
        return Err(ModelError::WrongDriveDegree { expected: 2, got: params.degree() });
    }
    let (alpha, beta, g) = (params.alpha(), params.beta(), params.coupling());
    Ok(TriconfluentForm {
        mu: C64::new(-g * g, 0.0),
        nu: -(I * 6.0 * beta).sqrt(),
        xi: -I * alpha * alpha / (2.0 * beta),
        shift: alpha / (2.0 * beta),
        scale: (I * 2.0 * beta / 3.0).sqrt(),
    })
}

/// Coefficients of the bi-confluent canonical form reached from the
/// super-parabolic drive via `τ = t²`, `U1 = τ^(1/4) ψ1`, `ξ = scale · τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiconfluentForm {
    pub mu: C64,
    pub nu: C64,
    pub lambda: C64,
    pub eta: C64,
    pub scale: C64,
}

/// `μ = -1/2`, `ν = α√(-2i/γ)`, `λ = 3/2`, `η = -(ν/2)(1 + Γ²/(iα))`.
pub fn biconfluent_heun_coefficients(params: &DriveParams) -> Result<BiconfluentForm, ModelError> {
    if params.degree() != 3 || params.beta() != 0.0 {
        return Err(ModelError::WrongDriveDegree { expected: 3, got: params.degree() });
    }
    let (alpha, gamma, g) = (params.alpha(), params.gamma3(), params.coupling());
    if alpha == 0.0 {
        return Err(ModelError::DegenerateAlpha);
    }
    let nu = alpha * (-I * 2.0 / gamma).sqrt();
    Ok(BiconfluentForm {
        mu: C64::new(-0.5, 0.0),
        nu,
        lambda: C64::new(1.5, 0.0),
        eta: -(nu / 2.0) * (1.0 + g * g / (I * alpha)),
        scale: (-I * gamma / 2.0).sqrt(),
    })
}
