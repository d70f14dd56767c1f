//! Tight-binding ring with alternating gain and loss under a static force,
//! its two-band Bloch reduction and the effective drive parameters near the
//! band edge and the zone centre.
//!
//! Bloch states are taken as `|k⟩ ∝ Σ e^{−ikn}|n⟩`, so the on-site ramp `+Fn`
//! advances the crystal momentum as `k0 + Ft`. The projected amplitude at
//! momentum `k` is `ψ(k) = N^{−1/2} Σ e^{ikn} a_n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eps::{classify_superparabolic, exceptional_points, SURFACE_TOL};
use crate::integrator::{eigenstate_for_value, EigenBranch, Trajectory};
use crate::model::{hamiltonian_matrix, DriveParams, Matrix2, ModelError, TwoLevelState};
use crate::ode::{self, OdeError, OdeOptions};

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("the expansion needs a nonzero force")]
    ZeroForce,
    #[error("the zone-centre expansion needs a nonzero initial momentum")]
    ZeroInitialMomentum,
    #[error("invalid lattice parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub kappa: f64,
    pub gainloss: f64,
    pub force: f64,
    pub k0: f64,
    pub sites: usize,
    /// Momentum spread of the initial wavepacket.
    #[serde(default = "default_sigma_k")]
    pub sigma_k: f64,
}

fn default_sigma_k() -> f64 {
    0.05
}

impl LatticeParams {
    pub fn new(kappa: f64, gainloss: f64, force: f64, k0: f64, sites: usize) -> Result<Self, LatticeError> {
        let p = LatticeParams { kappa, gainloss, force, k0, sites, sigma_k: default_sigma_k() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_sigma_k(mut self, sigma_k: f64) -> Result<Self, LatticeError> {
        self.sigma_k = sigma_k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        let bad = |m: &str| Err(LatticeError::InvalidParams(m.into()));
        if ![self.kappa, self.gainloss, self.force, self.k0, self.sigma_k].iter().all(|x| x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.gainloss < 0.0 {
            return bad("gain/loss rate must be non-negative");
        }
        if self.sites < 16 || self.sites % 2 != 0 {
            return bad("site count must be even and at least 16");
        }
        if !(self.sigma_k > 0.0) {
            return bad("momentum spread must be positive");
        }
        Ok(())
    }

    /// Site labels `−N/2, …, N/2 − 1`.
    pub fn site_labels(&self) -> impl Iterator<Item = i64> + '_ {
        let half = (self.sites / 2) as i64;
        -half..half
    }
}

/// `[[−2κ cos k, iΓ], [iΓ, 2κ cos k]]` acting on `(ψ(k), ψ(k+π))`.
pub fn bloch_hamiltonian(k: f64, kappa: f64, gainloss: f64) -> Matrix2 {
    hamiltonian_matrix(2.0 * kappa * k.cos(), gainloss)
}

/// `k0 + Ft` wrapped to `[−π, π)`.
pub fn accelerated_momentum(k0: f64, force: f64, t: f64) -> f64 {
    wrap_momentum(k0 + force * t)
}

fn wrap_momentum(k: f64) -> f64 {
    if (-PI..PI).contains(&k) {
        k
    } else {
        (k + PI).rem_euclid(2.0 * PI) - PI
    }
}

/// Band-edge expansion: with `t′ = t − t0` and `t0 = (π − 2k0)/(2F)`,
/// `2κ cos(k0 + Ft) ≈ −(αt′ + γt′³)`, `α = 2κF`, `γ = −κF³/3`.
///
/// The returned drive is `αt′ + γt′³`, i.e. the Bloch pair in swapped order
/// `(ψ(k+π), ψ(k))`.
pub fn effective_superparabolic(lattice: &LatticeParams) -> Result<(DriveParams, f64), LatticeError> {
    let (kappa, f) = (lattice.kappa, lattice.force);
    if f == 0.0 {
        return Err(LatticeError::ZeroForce);
    }
    let alpha = 2.0 * kappa * f;
    let gamma = -kappa * f * f * f / 3.0;
    let t0 = (PI - 2.0 * lattice.k0) / (2.0 * f);
    let params = if kappa == 0.0 {
        return Err(LatticeError::InvalidParams("zero hopping gives no drive".into()));
    } else {
        DriveParams::super_parabolic(alpha, gamma, lattice.gainloss)?
    };
    Ok((params, t0))
}

/// Zone-centre expansion with `α = −2κk0F` and `β = −2κF²`, after removing
/// the constant `−2κ + κk0²`, which is returned alongside.
pub fn effective_parabolic(lattice: &LatticeParams) -> Result<(DriveParams, f64), LatticeError> {
    let (kappa, f, k0) = (lattice.kappa, lattice.force, lattice.k0);
    if f == 0.0 {
        return Err(LatticeError::ZeroForce);
    }
    if k0 == 0.0 {
        return Err(LatticeError::ZeroInitialMomentum);
    }
    if kappa == 0.0 {
        return Err(LatticeError::InvalidParams("zero hopping gives no drive".into()));
    }
    let alpha = -2.0 * kappa * k0 * f;
    let beta = -2.0 * kappa * f * f;
    Ok((DriveParams::parabolic(alpha, beta, lattice.gainloss)?, -2.0 * kappa + kappa * k0 * k0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expansion {
    BandEdge,
    ZoneCenter,
}

fn threshold_count(kappa: f64, threshold: f64, below: usize, at: usize, above: usize) -> usize {
    let k = kappa.abs();
    if (k - threshold).abs() <= SURFACE_TOL * threshold.max(1.0) {
        at
    } else if k < threshold {
        below
    } else {
        above
    }
}

/// EP count from the hopping thresholds: band edge `|κ| = 3Γ/(4√2)` (2/4/6,
/// stated for `κF < 0`), zone centre `|κ| = 2Γ/k0²` (2/3/4). For `κF > 0` at
/// the band edge the generic discriminant of the mapped drive is used.
pub fn ep_count_from_lattice(lattice: &LatticeParams, expansion: Expansion) -> Result<usize, LatticeError> {
    let g = lattice.gainloss;
    if !(g > 0.0) {
        return Err(LatticeError::InvalidParams("thresholds need Γ > 0".into()));
    }
    match expansion {
        Expansion::BandEdge => {
            let (params, _) = effective_superparabolic(lattice)?;
            if lattice.kappa * lattice.force < 0.0 {
                Ok(threshold_count(lattice.kappa, 3.0 * g / (4.0 * 2f64.sqrt()), 2, 4, 6))
            } else {
                Ok(classify_superparabolic(&params).map_err(|e| LatticeError::InvalidParams(e.to_string()))?.ep_count)
            }
        }
        Expansion::ZoneCenter => {
            effective_parabolic(lattice)?;
            Ok(threshold_count(lattice.kappa, 2.0 * g / (lattice.k0 * lattice.k0), 2, 3, 4))
        }
    }
}

/// EP count by root counting on the mapped drive.
pub fn ep_count_generic(lattice: &LatticeParams, expansion: Expansion) -> Result<usize, LatticeError> {
    let params = match expansion {
        Expansion::BandEdge => effective_superparabolic(lattice)?.0,
        Expansion::ZoneCenter => effective_parabolic(lattice)?.0,
    };
    Ok(exceptional_points(&params).count())
}

/// Gaussian wavepacket centred on site 0 with crystal momentum `k0` and
/// momentum spread `σ_k`, whose two Bloch components are `(c1, c2)` at
/// `(k0, k0 + π)`. Normalised to unit total weight.
pub fn gaussian_wavepacket(lattice: &LatticeParams, components: (C64, C64)) -> Vec<C64> {
    let s = lattice.sigma_k;
    let mut a: Vec<C64> = lattice
        .site_labels()
        .map(|n| {
            let x = n as f64;
            let env = (-(x * s) * (x * s)).exp();
            let kn = lattice.k0 * x;
            let alt = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            env * C64::from_polar(1.0, -kn) * (components.0 + alt * components.1)
        })
        .collect();
    let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        a.iter_mut().for_each(|z| *z /= norm);
    }
    a
}

/// Bloch components `(ψ(k0), ψ(k0+π))` of the instantaneous eigenvector of
/// `bloch_hamiltonian(k0)` dominated by `ψ(k0+π)` (`level2`) or `ψ(k0)`.
pub fn bloch_eigenstate(lattice: &LatticeParams, level2: bool) -> Result<(C64, C64), LatticeError> {
    let v = 2.0 * lattice.kappa * lattice.k0.cos();
    let which = EigenBranch::for_level(v, level2);
    let s = eigenstate_for_value(v, lattice.gainloss, which).map_err(|_| {
        LatticeError::InvalidParams(format!("k0 = {} lies in the broken region (|2κ cos k0| <= Γ)", lattice.k0))
    })?;
    Ok((s.psi1, s.psi2))
}

/// `ψ(k) = N^{−1/2} Σ e^{ikn} a_n`.
pub fn project(lattice: &LatticeParams, amplitudes: &[C64], k: f64) -> C64 {
    let scale = 1.0 / (lattice.sites as f64).sqrt();
    lattice
        .site_labels()
        .zip(amplitudes)
        .map(|(n, a)| C64::from_polar(1.0, k * n as f64) * a)
        .sum::<C64>()
        * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub samples: usize,
    /// Origin of the force ramp: the on-site term is `F(n − n0)`.
    pub ramp_origin: f64,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        LatticeOptions { rel_tol: 1e-9, abs_tol: 1e-12, samples: 201, ramp_origin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeTrajectory {
    pub times: Vec<f64>,
    pub site_labels: Vec<i64>,
    /// Site amplitudes per sample.
    pub amplitudes: Vec<Vec<C64>>,
    /// `(ψ(k_t), ψ(k_t + π))` at the accelerated momentum, as a two-level
    /// trajectory.
    pub projected: Trajectory,
    pub momenta: Vec<f64>,
}

impl LatticeTrajectory {
    /// `Σ|a_n|²` per sample.
    pub fn norms(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    /// Packet-averaged band weights: the fraction of `Σ_k |ψ(k)|²` over the
    /// lattice momenta within `π/2` of `k_t` and of `k_t + π`, per sample.
    /// Unlike the single-momentum projection this sees the momentum spread.
    pub fn band_populations(&self) -> Vec<(f64, f64)> {
        let n = self.site_labels.len();
        let grid: Vec<f64> = (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect();
        self.amplitudes
            .iter()
            .zip(&self.momenta)
            .map(|(a, &kt)| {
                let (mut near, mut far) = (0.0, 0.0);
                for &k in &grid {
                    let w = self
                        .site_labels
                        .iter()
                        .zip(a)
                        .map(|(&l, z)| C64::from_polar(1.0, k * l as f64) * z)
                        .sum::<C64>()
                        .norm_sqr();
                    if wrap_momentum(k - kt).abs() < PI / 2.0 {
                        near += w;
                    } else {
                        far += w;
                    }
                }
                (near / (near + far), far / (near + far))
            })
            .collect()
    }

    /// `Σ n|a_n|² / Σ|a_n|²` per sample.
    pub fn mean_positions(&self) -> Vec<f64> {
        self.amplitudes
            .iter()
            .map(|a| {
                let w: f64 = a.iter().map(|z| z.norm_sqr()).sum();
                self.site_labels.iter().zip(a).map(|(&n, z)| n as f64 * z.norm_sqr()).sum::<f64>() / w
            })
            .collect()
    }
}

/// Integrates `i ȧ_n = −κ(a_{n−1} + a_{n+1}) + [iΓ(−1)^n + F(n − n0)] a_n`
/// on a ring from `t = 0` to `t_end`.
///
/// The ramp is removed by the substitution `a_n = b_n e^{−iF(n−n0)t}`, which
/// moves it into time-dependent hopping phases; the seam bond carries the
/// full unwrapped index jump.
pub fn propagate_lattice(
    lattice: &LatticeParams,
    initial: &[C64],
    t_end: f64,
    opts: &LatticeOptions,
) -> Result<LatticeTrajectory, LatticeError> {
    lattice.validate()?;
    let n = lattice.sites;
    if initial.len() != n {
        return Err(LatticeError::InvalidParams(format!("expected {n} amplitudes, got {}", initial.len())));
    }
    if !(t_end > 0.0 && t_end.is_finite()) || opts.samples < 2 {
        return Err(LatticeError::InvalidParams("need t_end > 0 and at least two samples".into()));
    }
    let labels: Vec<i64> = lattice.site_labels().collect();
    let (kappa, g, f) = (lattice.kappa, lattice.gainloss, lattice.force);
    let gain: Vec<f64> = labels.iter().map(|&l| if l.rem_euclid(2) == 0 { g } else { -g }).collect();
    let seam = (n - 1) as f64;
    let rhs = move |t: f64, b: &[C64], db: &mut [C64]| {
        let fwd = C64::from_polar(kappa, -f * t); // neighbour at n + 1
        let bwd = fwd.conj() * 1.0; // neighbour at n − 1
        let seam_fwd = C64::from_polar(kappa, f * seam * t);
        let seam_bwd = seam_fwd.conj();
        for i in 0..n {
            let (up, up_phase) = if i + 1 < n { (b[i + 1], fwd) } else { (b[0], seam_fwd) };
            let (dn, dn_phase) = if i > 0 { (b[i - 1], bwd) } else { (b[n - 1], seam_bwd) };
            db[i] = C64::new(0.0, 1.0) * (up * up_phase + dn * dn_phase) + b[i] * gain[i];
        }
    };
    let theta: Vec<f64> = labels.iter().map(|&l| f * (l as f64 - opts.ramp_origin)).collect();
    let times: Vec<f64> = (0..opts.samples).map(|j| t_end * j as f64 / (opts.samples - 1) as f64).collect();
    let o = OdeOptions { rel_tol: opts.rel_tol, abs_tol: opts.abs_tol, ..OdeOptions::default() };
    let out = ode::integrate(rhs, 0.0, initial, t_end, &times, &o, |_, _| false)?;

    let mut amplitudes = Vec::with_capacity(out.times.len());
    let mut states = Vec::with_capacity(out.times.len());
    let mut momenta = Vec::with_capacity(out.times.len());
    for (&t, b) in out.times.iter().zip(&out.states) {
        let a: Vec<C64> = b.iter().zip(&theta).map(|(z, th)| z * C64::from_polar(1.0, -th * t)).collect();
        let k = accelerated_momentum(lattice.k0, f, t);
        states.push(TwoLevelState::new(project(lattice, &a, k), project(lattice, &a, k + PI)));
        momenta.push(k);
        amplitudes.push(a);
    }
    let mut projected = Trajectory::from_states(out.times.clone(), states);
    projected.diagnostics.accepted_steps = out.stats.accepted;
    projected.diagnostics.rejected_steps = out.stats.rejected;
    projected.diagnostics.evaluations = out.stats.evaluations;
    Ok(LatticeTrajectory { times: out.times, site_labels: labels, amplitudes, projected, momenta })
}
