//! Scenario files: TOML tables describing the drive, the initial state, the
//! integration window and optional lattice and sweep settings.

use std::path::Path;

use nhlz::integrator::{default_window, prepare_eigenstate, EigenBranch, IntegrationOptions, Representation};
use nhlz::lattice::{
    bloch_eigenstate, effective_parabolic, effective_superparabolic, Expansion, LatticeOptions, LatticeParams,
};
use nhlz::model::{DriveParams, TwoLevelState};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub drive: Option<DriveSpec>,
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
    pub sweep: Option<SweepSpec>,
}

/// Either `coefficients = [c1, c2, ...]` or the named `alpha`, `beta`,
/// `gamma3`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub coefficients: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma3: Option<f64>,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub kappa: f64,
    pub gainloss: f64,
    pub force: f64,
    pub k0: f64,
    #[serde(default = "default_sites")]
    pub sites: usize,
    #[serde(default = "default_sigma_k")]
    pub sigma_k: f64,
    #[serde(default = "default_expansion")]
    pub expansion: Expansion,
    /// Lattice run length, starting from `t = 0`.
    pub t_end: Option<f64>,
    /// Stored time samples; each holds every site amplitude.
    #[serde(default = "default_lattice_samples")]
    pub samples: usize,
    #[serde(default)]
    pub ramp_origin: f64,
}

fn default_lattice_samples() -> usize {
    101
}

fn default_sites() -> usize {
    512
}

fn default_sigma_k() -> f64 {
    0.05
}

fn default_expansion() -> Expansion {
    Expansion::BandEdge
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    #[default]
    Eigenstate,
    Amplitudes,
    Population,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub kind: InitialKind,
    /// Eigenstate dominated by ψ1 (`1`) or ψ2 (`2`) at the start.
    #[serde(default = "default_level")]
    pub level: u8,
    pub psi1: Option<[f64; 2]>,
    pub psi2: Option<[f64; 2]>,
    pub p1: Option<f64>,
    pub theta: Option<f64>,
}

fn default_level() -> u8 {
    2
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec { kind: InitialKind::Eigenstate, level: 2, psi1: None, psi2: None, p1: None, theta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    pub abs_tol: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub representation: Representation,
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_samples() -> usize {
    1001
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        IntegrationSpec {
            t_start: None,
            t_end: None,
            rel_tol: default_rel_tol(),
            abs_tol: None,
            samples: default_samples(),
            representation: Representation::Amplitudes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    Alpha,
    Beta,
    Gamma3,
    Coupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|k| if k + 1 == self.count { self.stop } else { self.start + step * k as f64 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    /// Integrate every cell for final populations; otherwise classify only.
    #[serde(default = "yes")]
    pub finals: bool,
}

fn yes() -> bool {
    true
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub scenario: Scenario,
    pub seed: u64,
}

fn config<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

pub fn load(path: &Path, overrides: Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: Overrides) -> Result<Resolved, CliError> {
    let mut scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(tol) = overrides.tol {
        scenario.integration.rel_tol = tol;
    }
    let resolved = Resolved { scenario, seed: overrides.seed.unwrap_or(0) };
    resolved.validate()?;
    Ok(resolved)
}

impl DriveSpec {
    pub fn params(&self) -> Result<DriveParams, CliError> {
        let named = [self.alpha, self.beta, self.gamma3];
        let coeffs = match (&self.coefficients, named.iter().any(Option::is_some)) {
            (Some(_), true) => return config("drive: give either `coefficients` or alpha/beta/gamma3, not both"),
            (Some(c), false) => c.clone(),
            (None, false) => return config("drive: no coefficients given"),
            (None, true) => named.iter().map(|c| c.unwrap_or(0.0)).collect(),
        };
        DriveParams::new(coeffs, self.coupling).map_err(|e| CliError::Config(format!("drive: {e}")))
    }
}

impl LatticeSpec {
    pub fn params(&self) -> Result<LatticeParams, CliError> {
        LatticeParams::new(self.kappa, self.gainloss, self.force, self.k0, self.sites)
            .and_then(|p| p.with_sigma_k(self.sigma_k))
            .map_err(|e| CliError::Config(format!("lattice: {e}")))
    }

    /// Effective two-level drive and the offset between lattice time and
    /// drive time (`t_drive = t_lattice − offset`).
    pub fn effective(&self) -> Result<(DriveParams, f64), CliError> {
        let lat = self.params()?;
        let r = match self.expansion {
            Expansion::BandEdge => effective_superparabolic(&lat),
            Expansion::ZoneCenter => effective_parabolic(&lat).map(|(p, _)| (p, 0.0)),
        };
        r.map_err(|e| CliError::Config(format!("lattice: {e}")))
    }

    pub fn options(&self, integration: &IntegrationSpec) -> LatticeOptions {
        LatticeOptions {
            rel_tol: integration.rel_tol,
            abs_tol: integration.abs_tol.unwrap_or(integration.rel_tol * 1e-2),
            samples: self.samples,
            ramp_origin: self.ramp_origin,
        }
    }

    pub fn run_length(&self) -> Result<f64, CliError> {
        match self.t_end {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(_) => config("lattice: t_end must be positive"),
            None => config("lattice: t_end is required for lattice runs"),
        }
    }
}

impl Resolved {
    fn validate(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        match (&s.drive, &s.lattice) {
            (Some(_), Some(_)) => return config("give exactly one of [drive] and [lattice]"),
            (None, None) => return config("missing [drive] or [lattice] table"),
            (Some(d), None) => {
                d.params()?;
            }
            (None, Some(l)) => {
                l.params()?;
                if l.samples < 2 {
                    return config("lattice: samples must be at least 2");
                }
            }
        }
        let i = &s.integration;
        if !(i.rel_tol > 0.0 && i.rel_tol <= 1e-2) {
            return config("integration: rel_tol must lie in (0, 1e-2]");
        }
        if i.representation == Representation::SecondOrder {
            return config("integration: the second-order form has no trajectory output; use amplitudes or stokes");
        }
        if i.samples < 2 {
            return config("integration: samples must be at least 2");
        }
        if let (Some(a), Some(b)) = (i.t_start, i.t_end) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return config("integration: need finite t_start < t_end");
            }
        }
        let init = &s.initial;
        match init.kind {
            InitialKind::Eigenstate => {
                if !(init.level == 1 || init.level == 2) {
                    return config("initial: level must be 1 or 2");
                }
            }
            InitialKind::Amplitudes => match (init.psi1, init.psi2) {
                (Some(a), Some(b)) => {
                    if a.iter().chain(&b).any(|x| !x.is_finite()) || a.iter().chain(&b).all(|&x| x == 0.0) {
                        return config("initial: amplitudes must be finite and not both zero");
                    }
                }
                _ => return config("initial: amplitudes need psi1 and psi2 as [re, im]"),
            },
            InitialKind::Population => match (init.p1, init.theta) {
                (Some(p), Some(t)) if (0.0..=1.0).contains(&p) && t.is_finite() => {}
                _ => return config("initial: population needs p1 in [0, 1] and a finite theta"),
            },
            InitialKind::Random => {}
        }
        if let Some(sw) = &s.sweep {
            if sw.axes.is_empty() || sw.axes.len() > 2 {
                return config("sweep: give one or two axes");
            }
            if sw.axes.len() == 2 && sw.axes[0].name == sw.axes[1].name {
                return config("sweep: axes must differ");
            }
            for a in &sw.axes {
                if a.count == 0 || !a.start.is_finite() || !a.stop.is_finite() {
                    return config("sweep: axis needs finite bounds and count >= 1");
                }
            }
        }
        Ok(())
    }

    /// The drive used by two-level commands: the explicit one or the lattice's
    /// effective drive.
    pub fn drive(&self) -> Result<DriveParams, CliError> {
        match (&self.scenario.drive, &self.scenario.lattice) {
            (Some(d), _) => d.params(),
            (None, Some(l)) => Ok(l.effective()?.0),
            (None, None) => config("missing [drive] or [lattice] table"),
        }
    }

    pub fn lattice(&self) -> Result<&LatticeSpec, CliError> {
        self.scenario.lattice.as_ref().ok_or_else(|| CliError::Config("this command needs a [lattice] table".into()))
    }

    pub fn integration_options(&self, params: &DriveParams) -> IntegrationOptions {
        let i = &self.scenario.integration;
        let (lo, hi) = default_window(params);
        let mut o = IntegrationOptions::new(i.t_start.unwrap_or(lo), i.t_end.unwrap_or(hi))
            .with_tol(i.rel_tol)
            .with_samples(i.samples);
        if let Some(a) = i.abs_tol {
            o.abs_tol = a;
        }
        o.representation = i.representation;
        o
    }

    /// The state that does not depend on where it is placed, if any.
    fn explicit_state(&self, cell: u64) -> Option<TwoLevelState> {
        let init = &self.scenario.initial;
        let c = |z: [f64; 2]| Complex64::new(z[0], z[1]);
        match init.kind {
            InitialKind::Eigenstate => None,
            InitialKind::Amplitudes => Some(TwoLevelState::new(c(init.psi1?), c(init.psi2?))),
            InitialKind::Population => Some(TwoLevelState::from_population(init.p1?, init.theta?)),
            InitialKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(cell));
                let p1 = rng.gen_range(0.0..1.0);
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                Some(TwoLevelState::from_population(p1, theta))
            }
        }
    }

    /// Initial state at `t_start` of the two-level run; `cell` decorrelates
    /// random draws across sweep cells.
    pub fn initial_state(&self, params: &DriveParams, t_start: f64, cell: u64) -> Result<TwoLevelState, CliError> {
        if let Some(s) = self.explicit_state(cell) {
            return Ok(s);
        }
        let v = params.value(t_start);
        let which = EigenBranch::for_level(v, self.scenario.initial.level == 2);
        prepare_eigenstate(params, t_start, which).map_err(|e| CliError::Config(format!("initial: {e}")))
    }

    /// Bloch components `(ψ(k0), ψ(k0+π))` of the lattice wavepacket.
    pub fn lattice_components(&self) -> Result<(Complex64, Complex64), CliError> {
        if let Some(s) = self.explicit_state(0) {
            return Ok((s.psi1, s.psi2));
        }
        let lat = self.lattice()?.params()?;
        bloch_eigenstate(&lat, self.scenario.initial.level == 2).map_err(|e| CliError::Config(format!("initial: {e}")))
    }
}
