//! Globally adaptive Gauss–Kronrod (7/15) quadrature with user breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SqgError};

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

/// Integral estimate with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadValue {
    pub value: f64,
    pub error: f64,
}

impl QuadValue {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            error: 0.0,
        }
    }
}

impl std::ops::Add for QuadValue {
    type Output = QuadValue;
    fn add(self, o: QuadValue) -> QuadValue {
        QuadValue {
            value: self.value + o.value,
            error: self.error + o.error,
        }
    }
}

impl std::ops::Mul<f64> for QuadValue {
    type Output = QuadValue;
    fn mul(self, a: f64) -> QuadValue {
        QuadValue {
            value: self.value * a,
            error: self.error * a.abs(),
        }
    }
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-15,
            rel_tol: 1e-11,
            max_intervals: 4000,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut res_abs = kron.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        fv1[j] = f1;
        fv2[j] = f2;
        kron += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kron;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kron * h;
    res_abs *= h.abs();
    res_asc *= h.abs();
    let mut err = ((kron - gauss) * h).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

/// Integrate `f` over `[a, b]`, splitting first at every breakpoint that lies
/// strictly inside. The integrand is never evaluated at `a`, `b` or a
/// breakpoint.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadValue> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(SqgError::Quadrature {
            a,
            b,
            reason: "interval must be finite with a ≤ b".into(),
        });
    }
    if a == b {
        return Ok(QuadValue::zero());
    }
    let mut pts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > a && p < b && p.is_finite())
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut edges = vec![a];
    edges.extend(pts);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in edges.windows(2) {
        let (v, e) = gk15(&f, w[0], w[1]);
        total += v;
        total_err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
        if heap.len() >= cfg.max_intervals {
            return Err(SqgError::Quadrature {
                a,
                b,
                reason: format!(
                    "error {total_err:.3e} above tolerance after {} intervals",
                    heap.len()
                ),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(SqgError::Quadrature {
                a,
                b,
                reason: format!("interval [{:e}, {:e}] cannot be bisected", worst.a, worst.b),
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to remove drift from the incremental updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    if !value.is_finite() {
        return Err(SqgError::Quadrature {
            a,
            b,
            reason: "non-finite integrand".into(),
        });
    }
    Ok(QuadValue { value, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, &[], &QuadConfig::default()).unwrap();
        assert!((q.value - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn kinked_integrand_with_breakpoint() {
        let f = |x: f64| (x - 0.3).abs().sqrt();
        let exact = (2.0 / 3.0) * (0.3f64.powf(1.5) + 0.7f64.powf(1.5));
        let q = integrate(f, 0.0, 1.0, &[0.3], &QuadConfig::default()).unwrap();
        assert!((q.value - exact).abs() < 1e-10);
        assert!(q.error < 1e-9);
    }

    #[test]
    fn endpoint_singularity() {
        let q = integrate(|x| x.ln(), 0.0, 1.0, &[], &QuadConfig::default()).unwrap();
        assert!((q.value + 1.0).abs() < 1e-10);
    }

    #[test]
    fn reports_failure() {
        let cfg = QuadConfig {
            max_intervals: 3,
            ..QuadConfig::default()
        };
        let r = integrate(|x| (1.0 / x).sin(), 1e-6, 1.0, &[], &cfg);
        assert!(matches!(r, Err(SqgError::Quadrature { .. })));
    }
}
