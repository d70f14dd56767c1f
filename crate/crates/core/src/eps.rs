//! Exceptional points, transition points and the broken/unbroken partition
//! of the time axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DriveParams;
use crate::poly::{find_real_roots, Poly, RealRoot};

pub use crate::poly::find_real_roots as real_roots;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpError {
    #[error("classification needs a drive of degree {expected}, got degree {got}")]
    WrongDriveDegree { expected: usize, got: usize },
    #[error("classification is degenerate at zero coupling")]
    ZeroCoupling,
    #[error("no exceptional points")]
    NoExceptionalPoints,
    #[error("no transition point precedes the first exceptional point at t = {0}")]
    NoTransitionPoint(f64),
}

/// Which equation an exceptional point solves: `v = +Γ` or `v = -Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalPoint {
    pub time: f64,
    pub branch: Branch,
    pub multiplicity: u32,
}

impl ExceptionalPoint {
    /// Only odd-multiplicity crossings change the sign of `|v| - Γ`.
    pub fn switches_region(&self) -> bool {
        self.multiplicity % 2 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Broken,
    Unbroken,
}

/// A maximal interval of one PT phase. `None` ends are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub kind: RegionKind,
}

impl Region {
    pub fn lo(&self) -> f64 {
        self.start.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn hi(&self) -> f64 {
        self.end.unwrap_or(f64::INFINITY)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo() && t <= self.hi()
    }

    /// A representative interior point.
    pub fn midpoint(&self) -> f64 {
        match (self.start, self.end) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) => a + 1.0,
            (None, Some(b)) => b - 1.0,
            (None, None) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpSet {
    pub ep_times: Vec<ExceptionalPoint>,
    pub regions: Vec<Region>,
    pub transition_times: Vec<f64>,
}

impl EpSet {
    pub fn times(&self) -> Vec<f64> {
        self.ep_times.iter().map(|e| e.time).collect()
    }

    pub fn count(&self) -> usize {
        self.ep_times.len()
    }

    /// EPs at which the PT phase actually changes.
    pub fn switching(&self) -> Vec<ExceptionalPoint> {
        self.ep_times.iter().copied().filter(ExceptionalPoint::switches_region).collect()
    }

    pub fn broken_intervals(&self) -> Vec<(f64, f64)> {
        self.regions
            .iter()
            .filter(|r| r.kind == RegionKind::Broken)
            .map(|r| (r.lo(), r.hi()))
            .collect()
    }

    pub fn outermost(&self) -> f64 {
        self.ep_times.iter().map(|e| e.time.abs()).fold(0.0, f64::max)
    }

    pub fn region_at(&self, t: f64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(t))
    }
}

fn sorted_roots(p: &Poly) -> Vec<RealRoot> {
    // Drive polynomials are nonzero and finite by construction.
    find_real_roots(p).expect("nonzero finite polynomial")
}

/// Real roots of `v(t) = +Γ` and `v(t) = -Γ`, merged and sorted, together
/// with the phase partition they induce. With `Γ = 0` there are no
/// exceptional points and the whole line is unbroken.
pub fn exceptional_points(params: &DriveParams) -> EpSet {
    let transition_times = transition_points(params);
    let g = params.coupling();
    if g == 0.0 {
        return EpSet {
            ep_times: Vec::new(),
            regions: vec![Region { start: None, end: None, kind: RegionKind::Unbroken }],
            transition_times,
        };
    }
    let v = params.poly();
    let mut eps = Vec::new();
    for branch in [Branch::Plus, Branch::Minus] {
        let p = v.sub(&Poly::constant(branch.sign() * g));
        eps.extend(sorted_roots(&p).into_iter().map(|r| ExceptionalPoint {
            time: r.value,
            branch,
            multiplicity: r.multiplicity,
        }));
    }
    eps.sort_by(|a, b| a.time.total_cmp(&b.time));

    // |v| grows without bound, so both outer regions are unbroken.
    let mut regions = Vec::new();
    let mut start = None;
    let mut kind = RegionKind::Unbroken;
    for ep in eps.iter().filter(|e| e.switches_region()) {
        regions.push(Region { start, end: Some(ep.time), kind });
        start = Some(ep.time);
        kind = match kind {
            RegionKind::Broken => RegionKind::Unbroken,
            RegionKind::Unbroken => RegionKind::Broken,
        };
    }
    regions.push(Region { start, end: None, kind });
    EpSet { ep_times: eps, regions, transition_times }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceSide {
    AboveCritical,
    OnCritical,
    BelowCritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceClass {
    pub side: SurfaceSide,
    pub ep_count: usize,
    /// The signed discriminant-like quantity the side was read from.
    pub q: f64,
}

/// Relative width of the band treated as lying on a critical surface.
pub const SURFACE_TOL: f64 = 1e-9;

fn side_of(q: f64, scale: f64) -> SurfaceSide {
    if q.abs() < SURFACE_TOL * scale {
        SurfaceSide::OnCritical
    } else if q > 0.0 {
        SurfaceSide::AboveCritical
    } else {
        SurfaceSide::BelowCritical
    }
}

/// Side of `α⁴ = 16Γ²β²`: four EPs above, two below, three on it.
pub fn classify_parabolic(params: &DriveParams) -> Result<SurfaceClass, EpError> {
    if params.degree() != 2 {
        return Err(EpError::WrongDriveDegree { expected: 2, got: params.degree() });
    }
    let (a, b, g) = (params.alpha(), params.beta(), params.coupling());
    if g == 0.0 {
        return Err(EpError::ZeroCoupling);
    }
    let a4 = a.powi(4);
    let s = 16.0 * g * g * b * b;
    let q = a4 - s;
    let side = side_of(q, a4 + s);
    let ep_count = match side {
        SurfaceSide::AboveCritical => 4,
        SurfaceSide::OnCritical => 3,
        SurfaceSide::BelowCritical => 2,
    };
    Ok(SurfaceClass { side, ep_count, q })
}

/// Side of `4α³ + 27γΓ² = 0`, oriented so that six EPs lie below.
/// For `γ < 0` the drive `-v` (same EPs) has `γ > 0`, which flips `q`.
pub fn classify_superparabolic(params: &DriveParams) -> Result<SurfaceClass, EpError> {
    if params.degree() != 3 || params.beta() != 0.0 {
        return Err(EpError::WrongDriveDegree { expected: 3, got: params.degree() });
    }
    let (a, c, g) = (params.alpha(), params.gamma3(), params.coupling());
    if g == 0.0 {
        return Err(EpError::ZeroCoupling);
    }
    let x = 4.0 * a.powi(3);
    let y = 27.0 * c * g * g;
    let q = c.signum() * (x + y);
    let side = side_of(q, x.abs() + y.abs());
    let ep_count = match side {
        SurfaceSide::AboveCritical => 2,
        SurfaceSide::OnCritical => 4,
        SurfaceSide::BelowCritical => 6,
    };
    Ok(SurfaceClass { side, ep_count, q })
}

/// Distinct real roots of `v̇ = ±(v² - Γ²)`, sorted.
pub fn transition_points(params: &DriveParams) -> Vec<f64> {
    let v = params.poly();
    let g = params.coupling();
    let w = v.mul(&v).sub(&Poly::constant(g * g));
    let dv = v.derivative();
    let mut out: Vec<f64> = [dv.sub(&w), dv.add(&w)]
        .iter()
        .flat_map(|p| sorted_roots(p).into_iter().map(|r| r.value))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    out
}

/// The latest transition point strictly before the first exceptional point.
pub fn first_transition_point(ep_set: &EpSet) -> Result<f64, EpError> {
    let t1 = ep_set.ep_times.first().ok_or(EpError::NoExceptionalPoints)?.time;
    ep_set
        .transition_times
        .iter()
        .copied()
        .rfind(|&t| t < t1)
        .ok_or(EpError::NoTransitionPoint(t1))
}
