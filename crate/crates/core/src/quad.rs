//! Globally adaptive Gauss–Kronrod quadrature and Wynn's epsilon algorithm.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::ode::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge: estimate {value}, error {error} after {intervals} intervals")]
    NonConvergent { value: f64, error: f64, intervals: usize },
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    pub evaluations: usize,
}

/// One 15-point Kronrod rule with its embedded 7-point Gauss estimate.
pub fn gk15<T: Scalar, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron = kron + s * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + s * WG[j / 2];
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).modulus())
}

struct Piece<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Piece<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T> Eq for Piece<T> {}
impl<T> PartialOrd for Piece<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Piece<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// `∫_a^b f` by bisecting the interval with the largest error estimate
/// until the summed estimate meets `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<T: Scalar, F: FnMut(f64) -> T>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult<T>, QuadError> {
    if a == b {
        return Ok(QuadResult { value: T::default(), error: 0.0, evaluations: 0 });
    }
    let mut evals = 0;
    let mut eval = |x: f64| {
        evals += 1;
        f(x)
    };
    let (v0, e0) = gk15(&mut eval, a, b);
    if !v0.is_finite() {
        return Err(QuadError::NonFinite(0.5 * (a + b)));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v0, error: e0 });
    let mut total = v0;
    let mut err = e0;
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * total.modulus());
        if err <= tol {
            break;
        }
        if heap.len() >= opts.max_intervals {
            return Err(QuadError::NonConvergent { value: total.modulus(), error: err, intervals: heap.len() });
        }
        let worst = heap.pop().expect("nonempty");
        let m = 0.5 * (worst.a + worst.b);
        if m == worst.a || m == worst.b {
            // Interval cannot be split further in floating point.
            return Err(QuadError::NonConvergent { value: total.modulus(), error: err, intervals: heap.len() + 1 });
        }
        let (vl, el) = gk15(&mut eval, worst.a, m);
        let (vr, er) = gk15(&mut eval, m, worst.b);
        if !(vl.is_finite() && vr.is_finite()) {
            return Err(QuadError::NonFinite(m));
        }
        total = total - worst.value + vl + vr;
        err = err - worst.error + el + er;
        heap.push(Piece { a: worst.a, b: m, value: vl, error: el });
        heap.push(Piece { a: m, b: worst.b, value: vr, error: er });
    }
    // Re-sum to shed the drift of the running updates.
    let mut value = T::default();
    let mut error = 0.0;
    for p in heap.iter() {
        value = value + p.value;
        error += p.error;
    }
    Ok(QuadResult { value, error, evaluations: evals })
}

/// Highest even column of Wynn's epsilon table built from `seq`, the
/// Shanks-transform estimate of the sequence limit.
pub fn wynn_epsilon(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n == 0 {
        return 0.0;
    }
    let mut prev = vec![0.0; n + 1];
    let mut cur: Vec<f64> = seq.to_vec();
    let mut best = seq[n - 1];
    let mut k = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 {
                // Converged column; its value is the limit.
                return cur[i + 1];
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        k += 1;
        prev = cur;
        cur = next;
        if k % 2 == 0 {
            best = *cur.last().expect("nonempty");
        }
    }
    best
}
