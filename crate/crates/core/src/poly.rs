//! Dense real polynomials and certified real-root isolation.
//!
//! Roots are isolated recursively: the real roots of `p'` split the line into
//! intervals on which `p` is monotone, so each interval holds at most one
//! simple root and a sign change brackets it exactly. Critical points where
//! `p` itself vanishes are reported as multiple roots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("cannot isolate the roots of the zero polynomial")]
    ZeroPolynomial,
    #[error("polynomial has a non-finite coefficient")]
    NonFinite,
}

/// Polynomial with coefficients in ascending order, `c[0] + c[1] x + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree of the polynomial; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `sum |c_k| |x|^k`, the natural rounding scale of `eval(x)`.
    pub fn magnitude(&self, x: f64) -> f64 {
        let ax = x.abs();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * ax + c.abs())
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Poly {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(0.0);
        out.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new(
            (0..n)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or(0.0)
                        + other.coeffs.get(k).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    /// `p(x + s)` as a polynomial in `x`.
    pub fn shifted(&self, s: f64) -> Poly {
        let lin = Poly::new(vec![s, 1.0]);
        self.coeffs
            .iter()
            .rev()
            .fold(Poly::zero(), |acc, &c| acc.mul(&lin).add(&Poly::constant(c)))
    }

    /// Cauchy bound: every root satisfies `|x| < bound`.
    pub fn root_bound(&self) -> f64 {
        let lead = self.leading().abs();
        let m = self.coeffs[..self.coeffs.len().saturating_sub(1)]
            .iter()
            .fold(0.0_f64, |m, c| m.max(c.abs() / lead));
        1.0 + m
    }
}

/// A real root together with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRoot {
    pub value: f64,
    pub multiplicity: u32,
}

/// Relative threshold under which `|p(c)| / magnitude(c)` at a critical point
/// is read as a multiple root.
pub const MULTIPLE_ROOT_TOL: f64 = 1e-12;

/// All real roots of `p`, sorted ascending, with multiplicities.
pub fn find_real_roots(p: &Poly) -> Result<Vec<RealRoot>, RootError> {
    if p.is_zero() {
        return Err(RootError::ZeroPolynomial);
    }
    if p.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(RootError::NonFinite);
    }
    Ok(roots_rec(p))
}

fn roots_rec(p: &Poly) -> Vec<RealRoot> {
    match p.degree() {
        0 => Vec::new(),
        1 => vec![RealRoot { value: -p.coeffs[0] / p.coeffs[1], multiplicity: 1 }],
        _ => {
            let crit = roots_rec(&p.derivative());
            let bound = p.root_bound() + 1.0;

            // Breakpoints: -bound, critical points, +bound. Each carries
            // Some(multiplicity) when p vanishes there.
            let mut points: Vec<(f64, Option<u32>)> = Vec::with_capacity(crit.len() + 2);
            points.push((-bound, None));
            for c in &crit {
                if c.value <= -bound || c.value >= bound {
                    continue;
                }
                let val = p.eval(c.value);
                let is_root = val.abs() <= MULTIPLE_ROOT_TOL * p.magnitude(c.value);
                points.push((c.value, is_root.then_some(c.multiplicity + 1)));
            }
            points.push((bound, None));

            let mut out = Vec::new();
            for w in points.windows(2) {
                let (a, ra) = w[0];
                let (b, rb) = w[1];
                if let Some(m) = ra {
                    out.push(RealRoot { value: a, multiplicity: m });
                }
                if ra.is_some() || rb.is_some() || a >= b {
                    continue;
                }
                let (fa, fb) = (p.eval(a), p.eval(b));
                if fa == 0.0 {
                    out.push(RealRoot { value: a, multiplicity: 1 });
                } else if fa.signum() != fb.signum() && fb != 0.0 {
                    out.push(RealRoot { value: refine_bracketed(p, a, b, fa), multiplicity: 1 });
                }
            }
            out
        }
    }
}

/// Newton iteration safeguarded by bisection on a sign-changing bracket.
fn refine_bracketed(p: &Poly, mut a: f64, mut b: f64, fa: f64) -> f64 {
    let dp = p.derivative();
    let sa = fa.signum();
    let mut x = 0.5 * (a + b);
    for _ in 0..300 {
        let fx = p.eval(x);
        if fx == 0.0 {
            return x;
        }
        if fx.signum() == sa {
            a = x;
        } else {
            b = x;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
        let d = dp.eval(x);
        let newton = x - fx / d;
        x = if d != 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if x == a || x == b {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(roots: &[RealRoot]) -> Vec<f64> {
        roots.iter().map(|r| r.value).collect()
    }

    #[test]
    fn golden_ratio_pair() {
        let r = find_real_roots(&Poly::new(vec![-1.0, 1.0, 1.0])).unwrap();
        let v = values(&r);
        let s5 = 5f64.sqrt();
        assert_eq!(v.len(), 2);
        assert!((v[0] + (1.0 + s5) / 2.0).abs() < 1e-14);
        assert!((v[1] - (s5 - 1.0) / 2.0).abs() < 1e-14);
        assert!((v[0] + 1.61803).abs() < 1e-5 && (v[1] - 0.61803).abs() < 1e-5);
    }

    #[test]
    fn depressed_cubic_single_root() {
        let r = find_real_roots(&Poly::new(vec![-1.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].value - 0.68233).abs() < 1e-5);
        let p = Poly::new(vec![-1.0, 1.0, 0.0, 1.0]);
        assert!(p.eval(r[0].value).abs() < 1e-15);
    }

    #[test]
    fn no_real_roots() {
        assert!(find_real_roots(&Poly::new(vec![1.0, 0.0, 1.0])).unwrap().is_empty());
    }

    #[test]
    fn zero_polynomial_rejected() {
        assert_eq!(find_real_roots(&Poly::zero()), Err(RootError::ZeroPolynomial));
        assert_eq!(find_real_roots(&Poly::new(vec![0.0, 0.0])), Err(RootError::ZeroPolynomial));
    }

    #[test]
    fn multiplicities() {
        // (t + 1)(2t - 1)^2 = 4t^3 - 3t + 1
        let r = find_real_roots(&Poly::new(vec![1.0, -3.0, 0.0, 4.0])).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0].value + 1.0).abs() < 1e-12 && r[0].multiplicity == 1);
        assert!((r[1].value - 0.5).abs() < 1e-12 && r[1].multiplicity == 2);

        // t^2 (t^4 + 2 t^2 + 4)
        let r = find_real_roots(&Poly::new(vec![0.0, 0.0, 4.0, 0.0, 2.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].multiplicity, 2);
        assert!(r[0].value.abs() < 1e-12);

        // (t - 2)^3
        let r = find_real_roots(&Poly::new(vec![-8.0, 12.0, -6.0, 1.0])).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].multiplicity, 3);
        assert!((r[0].value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn close_but_distinct_roots_are_separated() {
        // (t - 1)(t - 1 - 1e-4)
        let p = Poly::new(vec![1.0 + 1e-4, -(2.0 + 1e-4), 1.0]);
        let r = find_real_roots(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[1].value - r[0].value - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn calculus_helpers() {
        let p = Poly::new(vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(p.derivative().coeffs(), &[1.0, 0.0, 3.0]);
        let a = p.antiderivative();
        assert!((a.eval(1.0) - 0.75).abs() < 1e-15);
        assert_eq!(p.mul(&Poly::new(vec![0.0, 1.0])).coeffs(), &[0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(p.sub(&p), Poly::zero());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roots_of_products_of_linear_factors(
                mut rs in proptest::collection::vec(-20.0f64..20.0, 1..7)
            ) {
                rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // Keep roots well separated so the multiplicity tolerance is not in play.
                prop_assume!(rs.windows(2).all(|w| w[1] - w[0] > 1e-2));
                let p = rs.iter().fold(Poly::constant(1.0), |acc, r| acc.mul(&Poly::new(vec![-r, 1.0])));
                let found = find_real_roots(&p).unwrap();
                prop_assert_eq!(found.len(), rs.len());
                for (f, r) in found.iter().zip(&rs) {
                    prop_assert!((f.value - r).abs() < 1e-7 * (1.0 + r.abs()), "{} vs {}", f.value, r);
                }
            }

            #[test]
            fn residuals_are_small(c in proptest::collection::vec(-5.0f64..5.0, 2..8)) {
                let p = Poly::new(c);
                prop_assume!(!p.is_zero() && p.degree() >= 1 && p.leading().abs() > 1e-3);
                for r in find_real_roots(&p).unwrap() {
                    prop_assert!(p.eval(r.value).abs() <= 1e-9 * p.magnitude(r.value).max(1.0));
                }
            }
        }
    }
}
