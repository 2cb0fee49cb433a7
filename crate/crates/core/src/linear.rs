//! The linearised operator about a steady state,
//!
//! ```text
//! Lθ = −q₀·∇θ − q·∇θ₀ − Λθ,   q = (R₂θ, −R₁θ),
//! ```
//!
//! together with its shifted version `L − s`, dense finite sections on
//! `span{e^{ik·x} : 0 < max|kᵢ| ≤ K}`, rightmost eigenpairs and the linear
//! semigroup.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use crate::eigen::DenseMatrix;

use crate::dynamics::{abs_k, if_rk4_step, transport, Background, SteadyState, Terms};
use crate::eigen;
use crate::error::{Result, SqgError};
use crate::spectral::{self, norm, GridSpec, Norm, SpectralField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `L − shift`, optionally Galerkin-truncated to `0 < max|kᵢ| ≤ K`.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    steady: Arc<SteadyState>,
    grid: GridSpec,
    bg: Arc<Background>,
    shift: f64,
    truncation: Option<usize>,
    abs_k: Vec<f64>,
    max_dt: f64,
}

impl LinearOperator {
    pub fn new(steady: Arc<SteadyState>) -> Self {
        let grid = steady.grid();
        let bg = Arc::new(steady.background().clone());
        Self {
            abs_k: abs_k(grid),
            steady,
            grid,
            bg,
            shift: 0.0,
            truncation: None,
            max_dt: 2.5e-3,
        }
    }

    /// The shifted operator `L_δ = L − (λ + δ)` with `0 < δ < λγ/2`.
    pub fn shifted(steady: Arc<SteadyState>, lambda: f64, delta_shift: f64, gamma: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(SqgError::Domain(format!(
                "the shifted operator needs λ > 0, got {lambda}"
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(SqgError::Domain(format!("γ must lie in [0, 1], got {gamma}")));
        }
        if !(delta_shift > 0.0 && delta_shift < 0.5 * lambda * gamma) {
            return Err(SqgError::Domain(format!(
                "δ_shift = {delta_shift} must lie in (0, λγ/2) = (0, {})",
                0.5 * lambda * gamma
            )));
        }
        Self::new(steady).with_shift(lambda + delta_shift)
    }

    pub fn with_shift(mut self, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(SqgError::Config(format!("shift must be finite, got {shift}")));
        }
        self.shift = shift;
        Ok(self)
    }

    /// Restrict to the finite section `0 < max|kᵢ| ≤ k`.
    pub fn with_truncation(mut self, k: usize) -> Result<Self> {
        check_truncation(self.grid, k)?;
        self.truncation = Some(k);
        Ok(self)
    }

    /// Cap on the internal step of [`evolve_linear`](Self::evolve_linear).
    pub fn with_max_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SqgError::Config(format!("max_dt must be positive, got {dt}")));
        }
        self.max_dt = dt;
        Ok(self)
    }

    pub fn steady(&self) -> &Arc<SteadyState> {
        &self.steady
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn truncation(&self) -> Option<usize> {
        self.truncation
    }

    /// `‖∇θ₀‖_{L∞}`, an upper bound for the growth rate.
    pub fn gradient_bound(&self) -> f64 {
        norm(self.steady.theta0(), Norm::LinfGrad)
    }

    /// Same operator on the smallest grid that represents the section
    /// `0 < max|kᵢ| ≤ k` and its products with the background without
    /// aliasing.
    fn reduced(&self, k: usize) -> Result<Self> {
        check_truncation(self.grid, k)?;
        let b = self.steady.bandwidth();
        let mut n = 8usize;
        while n / 3 < k.max(b) || n <= 2 * k + b {
            n += 2;
        }
        if n >= self.grid.n() {
            let mut op = self.clone();
            op.truncation = Some(k);
            return Ok(op);
        }
        let grid = GridSpec::new(n)?;
        Ok(Self {
            steady: self.steady.clone(),
            grid,
            bg: Arc::new(self.steady.background_on(grid)),
            shift: self.shift,
            truncation: Some(k),
            abs_k: abs_k(grid),
            max_dt: self.max_dt,
        })
    }

    fn project(&self, c: &mut [Complex64]) {
        if let Some(k) = self.truncation {
            truncate_in_place(self.grid, c, k);
        }
    }

    /// Action on a real field's coefficients.
    fn apply_real(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut input = v.to_vec();
        self.project(&mut input);
        let mut out = transport(self.grid, Some(&self.bg), &input, Terms::LINEAR);
        for i in 0..out.len() {
            out[i] -= input[i] * (self.abs_k[i] + self.shift);
        }
        self.project(&mut out);
        spectral::zero_nyquist(self.grid, &mut out);
        out[0] = ZERO;
        out
    }

    fn check_input(&self, theta: &SpectralField) -> Result<()> {
        if theta.grid() != self.grid {
            return Err(SqgError::Config(format!(
                "field grid n = {} does not match operator grid n = {}",
                theta.grid().n(),
                self.grid.n()
            )));
        }
        if !theta.is_mean_free() {
            return Err(SqgError::Domain("the linear operator acts on mean-free fields".into()));
        }
        Ok(())
    }

    /// Apply `L − shift` (complex fields are split into real and imaginary
    /// parts).
    pub fn apply(&self, theta: &SpectralField) -> Result<SpectralField> {
        self.check_input(theta)?;
        if theta.is_conjugate_symmetric() {
            return SpectralField::from_coeffs(self.grid, self.apply_real(theta.coeffs()));
        }
        let (a, b) = theta.split_real_imag();
        let la = SpectralField::from_coeffs(self.grid, self.apply_real(a.coeffs()))?;
        let lb = SpectralField::from_coeffs(self.grid, self.apply_real(b.coeffs()))?;
        SpectralField::combine_real_imag(&la, &lb)
    }

    /// Basis of the section `0 < max|kᵢ| ≤ k`, ordered by `(k₂, k₁)`.
    pub fn section_basis(k: usize) -> Vec<(i64, i64)> {
        let k = k as i64;
        let mut basis = Vec::with_capacity(((2 * k + 1) * (2 * k + 1) - 1) as usize);
        for k2 in -k..=k {
            for k1 in -k..=k {
                if k1 != 0 || k2 != 0 {
                    basis.push((k1, k2));
                }
            }
        }
        basis
    }

    /// Dense finite section. Column `j` holds the coefficients of
    /// `(L − shift) e^{i kⱼ·x}` on the basis.
    pub fn assemble_dense(&self, k: usize) -> Result<DenseMatrix> {
        let op = self.reduced(k)?;
        let basis = Self::section_basis(k);
        let dim = basis.len();
        let g = op.grid;
        let cols: Vec<Vec<Complex64>> = basis
            .par_iter()
            .map(|&(k1, k2)| {
                let mut e = SpectralField::zeros(g);
                e.set_coeff(k1, k2, Complex64::new(1.0, 0.0)).expect("mode inside grid");
                let le = op.apply(&e).expect("basis mode is admissible");
                let mut col: Vec<Complex64> =
                    basis.iter().map(|&(p1, p2)| le.coeff(p1, p2)).collect();
                // Transform roundoff on structurally zero entries.
                let floor = 64.0 * f64::EPSILON * col.iter().fold(0.0f64, |m, c| m.max(c.norm()));
                for c in &mut col {
                    if c.norm() <= floor {
                        *c = ZERO;
                    }
                }
                col
            })
            .collect();
        let mut m = DenseMatrix::zeros(dim);
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        Ok(m)
    }

    /// Rightmost eigenpair of the section `0 < max|kᵢ| ≤ k`.
    pub fn rightmost_eigenpair(&self, k: usize, method: &EigenMethod) -> Result<SpectrumResult> {
        let op = self.reduced(k)?;
        let (eigenvalues, rightmost, phi_red, iterations) = match method {
            EigenMethod::Dense { cap } => {
                let dim = Self::section_basis(k).len();
                if dim > *cap {
                    return Err(SqgError::Resource(format!(
                        "dense section of dimension {dim} exceeds the cap {cap}"
                    )));
                }
                let (vals, mu, phi) = op.dense_rightmost(k)?;
                (vals, mu, phi, None)
            }
            EigenMethod::SemigroupPower(cfg) => {
                let (vals, mu, phi, it) = op.power_rightmost(cfg)?;
                (vals, mu, phi, Some(it))
            }
        };
        // A real eigenvalue comes back with a roundoff imaginary part.
        let mut rightmost = rightmost;
        if rightmost.im.abs() <= 1e-10 * rightmost.re.abs().max(1.0) {
            rightmost.im = 0.0;
        }
        let mut phi = phi_red.resample(self.grid);
        normalize_eigenfunction(&mut phi);
        let full = self.clone().with_truncation(k)?;
        let mut r = full.apply(&phi)?;
        r.axpy_complex(-rightmost, &phi)?;
        Ok(SpectrumResult {
            truncation: k,
            eigenvalues,
            rightmost,
            eigenfunction: phi,
            residual: norm(&r, Norm::L2),
            iterations,
        })
    }

    fn dense_rightmost(&self, k: usize) -> Result<(Vec<Complex64>, Complex64, SpectralField)> {
        let m = self.assemble_dense(k)?;
        let e = eigen::eig(&m)?;
        let best = rightmost_index(&e.values);
        let basis = Self::section_basis(k);
        let mut phi = SpectralField::zeros(self.grid);
        for (c, &(k1, k2)) in e.vectors[best].iter().zip(&basis) {
            phi.set_coeff(k1, k2, *c)?;
        }
        let mut vals = e.values.clone();
        vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        Ok((vals, e.values[best], phi))
    }

    /// Real two-dimensional subspace iteration on `e^{(L−shift)τ}`.
    fn power_rightmost(
        &self,
        cfg: &PowerConfig,
    ) -> Result<(Vec<Complex64>, Complex64, SpectralField, usize)> {
        cfg.validate()?;
        let k = self.truncation.expect("reduced operators are truncated");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut q = [
            random_real_field(self.grid, k, &mut rng),
            random_real_field(self.grid, k, &mut rng),
        ];
        orthonormalize(&mut q);
        let op = self.clone().with_max_dt(cfg.tau / cfg.steps_per_tau as f64)?;
        let mut last = f64::INFINITY;
        for it in 1..=cfg.max_iter {
            let y0 = op.evolve_linear(&q[0], cfg.tau)?;
            let y1 = op.evolve_linear(&q[1], cfg.tau)?;
            q = [y0, y1];
            if norm(&q[0], Norm::L2) == 0.0 {
                return Err(SqgError::Convergence {
                    iterations: it,
                    detail: "iterate vanished".into(),
                });
            }
            orthonormalize(&mut q);
            let lq = [op.apply(&q[0])?, op.apply(&q[1])?];
            let mut h = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] = lq[j].inner(&q[i])?.re;
                }
            }
            let (mu, other, y) = rightmost_2x2(h);
            let mut phi = q[0].scaled(0.0);
            phi.axpy_complex(y[0], &q[0])?;
            phi.axpy_complex(y[1], &q[1])?;
            let nrm = norm(&phi, Norm::L2);
            phi.scale(1.0 / nrm);
            let mut r = lq[0].scaled(0.0);
            r.axpy_complex(y[0] / nrm, &lq[0])?;
            r.axpy_complex(y[1] / nrm, &lq[1])?;
            r.axpy_complex(-mu, &phi)?;
            let res = norm(&r, Norm::L2);
            last = res;
            if res < cfg.tol {
                let mut vals = vec![mu, other];
                vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
                return Ok((vals, mu, phi, it));
            }
        }
        Err(SqgError::Convergence {
            iterations: cfg.max_iter,
            detail: format!("Ritz residual {last:.3e} above tolerance {:.3e}", cfg.tol),
        })
    }

    /// One integrating-factor RK4 step of `∂ₜθ = (L − shift)θ` on real
    /// coefficients.
    pub(crate) fn step_real(&self, v: &[Complex64], dt: f64) -> Vec<Complex64> {
        let rates: Vec<f64> = self.abs_k.iter().map(|r| r + self.shift).collect();
        let mut input = v.to_vec();
        self.project(&mut input);
        let mut out = if_rk4_step(&input, dt, &rates, |w| {
            let mut a = transport(self.grid, Some(&self.bg), w, Terms::LINEAR);
            self.project(&mut a);
            a
        });
        self.project(&mut out);
        spectral::zero_nyquist(self.grid, &mut out);
        out[0] = ZERO;
        out
    }

    /// Step size used by [`evolve_linear`](Self::evolve_linear) for a
    /// horizon `t`.
    pub fn internal_steps(&self, t: f64) -> usize {
        let umax = self
            .bg
            .q1
            .iter()
            .zip(&self.bg.q2)
            .fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()));
        let dx = match self.truncation {
            Some(k) => 2.0 * PI / (3 * k.max(1)) as f64,
            None => self.grid.dx(),
        };
        let mut h = self.max_dt;
        if umax > 0.0 {
            h = h.min(0.5 * dx / umax);
        }
        ((t / h).ceil() as usize).max(1)
    }

    /// `e^{(L − shift)t} θ` by integrating-factor RK4 with uniform steps.
    pub fn evolve_linear(&self, theta: &SpectralField, t: f64) -> Result<SpectralField> {
        Ok(self.evolve_linear_sampled(theta, &[t])?.pop().expect("one sample"))
    }

    /// `e^{(L − shift)t} θ` at each of the nondecreasing times `ts`.
    pub fn evolve_linear_sampled(&self, theta: &SpectralField, ts: &[f64]) -> Result<Vec<SpectralField>> {
        self.check_input(theta)?;
        if ts.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(SqgError::Domain("evolution times must be finite and nonnegative".into()));
        }
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(SqgError::Domain("evolution times must be nondecreasing".into()));
        }
        let (a, b) = theta.split_real_imag();
        let real = theta.is_conjugate_symmetric();
        let mut va = a.into_coeffs();
        let mut vb = b.into_coeffs();
        let mut out = Vec::with_capacity(ts.len());
        let mut now = 0.0;
        for &t in ts {
            let span = t - now;
            if span > 0.0 {
                let steps = self.internal_steps(span);
                let dt = span / steps as f64;
                for _ in 0..steps {
                    va = self.step_real(&va, dt);
                    if !real {
                        vb = self.step_real(&vb, dt);
                    }
                }
                if va.iter().chain(&vb).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(SqgError::BlowUp {
                        t,
                        reason: "non-finite coefficient in the linear flow".into(),
                    });
                }
                now = t;
            }
            let fa = SpectralField::from_coeffs(self.grid, va.clone())?;
            if real {
                out.push(fa);
            } else {
                let fb = SpectralField::from_coeffs(self.grid, vb.clone())?;
                out.push(SpectralField::combine_real_imag(&fa, &fb)?);
            }
        }
        Ok(out)
    }

    /// `t^γ ‖e^{(L−shift)t} v‖ / (‖v‖^{1−γ} ‖Λ^{−1}v‖^γ)`.
    pub fn smoothing_probe(&self, v: &SpectralField, t: f64, gamma: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(SqgError::Domain(format!("probe time must be positive, got {t}")));
        }
        let ev = self.evolve_linear(v, t)?;
        smoothing_ratio(v, &ev, t, gamma)
    }

    /// Supremum of the smoothing ratio over the given fields and times.
    pub fn smoothing_constant(&self, vs: &[SpectralField], ts: &[f64], gamma: f64) -> Result<f64> {
        if ts.iter().any(|t| !(*t > 0.0)) {
            return Err(SqgError::Domain("probe times must be positive".into()));
        }
        let sups: Vec<f64> = vs
            .par_iter()
            .map(|v| -> Result<f64> {
                let evs = self.evolve_linear_sampled(v, ts)?;
                let mut best = 0.0f64;
                for (ev, &t) in evs.iter().zip(ts) {
                    best = best.max(smoothing_ratio(v, ev, t, gamma)?);
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        Ok(sups.into_iter().fold(0.0, f64::max))
    }
}

fn smoothing_ratio(v: &SpectralField, ev: &SpectralField, t: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SqgError::Domain(format!("γ must lie in [0, 1], got {gamma}")));
    }
    let nv = norm(v, Norm::L2);
    if nv == 0.0 {
        return Err(SqgError::Domain("probe field must be nonzero".into()));
    }
    let ninv = norm(v, Norm::Hs(-1.0));
    Ok(t.powf(gamma) * norm(ev, Norm::L2) / (nv.powf(1.0 - gamma) * ninv.powf(gamma)))
}

fn check_truncation(grid: GridSpec, k: usize) -> Result<()> {
    if k == 0 || k as i64 > grid.dealias_cutoff() {
        return Err(SqgError::Resolution(format!(
            "truncation K = {k} must satisfy 1 ≤ K ≤ n/3 = {}",
            grid.dealias_cutoff()
        )));
    }
    Ok(())
}

pub(crate) fn truncate_in_place(grid: GridSpec, c: &mut [Complex64], k: usize) {
    let k = k as i64;
    for (idx, v) in c.iter_mut().enumerate() {
        let (k1, k2) = grid.wavevector(idx);
        if k1.abs().max(k2.abs()) > k {
            *v = ZERO;
        }
    }
}

/// Index of the eigenvalue with the largest real part; among equal real
/// parts the one with the largest imaginary part.
fn rightmost_index(vals: &[Complex64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        let b = vals[best];
        let tol = 1e-12 * b.re.abs().max(1.0);
        if v.re > b.re + tol || ((v.re - b.re).abs() <= tol && v.im > b.im) {
            best = i;
        }
    }
    best
}

/// Unit L² norm, largest coefficient real and positive.
fn normalize_eigenfunction(phi: &mut SpectralField) {
    let nrm = norm(phi, Norm::L2);
    if nrm == 0.0 {
        return;
    }
    let big = phi
        .coeffs()
        .iter()
        .copied()
        .fold(ZERO, |m, c| if c.norm() > m.norm() * (1.0 + 1e-9) { c } else { m });
    let phase = big.conj() / big.norm();
    for c in phi.coeffs_mut() {
        *c = *c * phase / nrm;
    }
}

fn orthonormalize(q: &mut [SpectralField; 2]) {
    for _ in 0..2 {
        let n0 = norm(&q[0], Norm::L2);
        q[0].scale(1.0 / n0);
        let p = q[1].inner(&q[0]).expect("same grid").re;
        let q0 = q[0].clone();
        q[1].axpy(-p, &q0).expect("same grid");
        let n1 = norm(&q[1], Norm::L2);
        q[1].scale(1.0 / n1);
    }
}

/// Rightmost eigenvalue of a real 2×2 matrix, the other eigenvalue, and an
/// eigenvector for the first.
fn rightmost_2x2(h: [[f64; 2]; 2]) -> (Complex64, Complex64, [Complex64; 2]) {
    let tr = h[0][0] + h[1][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let disc = Complex64::new(0.25 * tr * tr - det, 0.0).sqrt();
    let half = Complex64::new(0.5 * tr, 0.0);
    let (l1, l2) = (half + disc, half - disc);
    let (mu, other) = if l1.re > l2.re || (l1.re == l2.re && l1.im >= l2.im) {
        (l1, l2)
    } else {
        (l2, l1)
    };
    let a = [Complex64::new(h[0][1], 0.0), mu - h[0][0]];
    let b = [mu - h[1][1], Complex64::new(h[1][0], 0.0)];
    let na = a[0].norm_sqr() + a[1].norm_sqr();
    let nb = b[0].norm_sqr() + b[1].norm_sqr();
    let y = if na == 0.0 && nb == 0.0 {
        [Complex64::new(1.0, 0.0), ZERO]
    } else if na >= nb {
        a
    } else {
        b
    };
    (mu, other, y)
}

/// Random real mean-free field on `0 < max|kᵢ| ≤ k` with coefficients
/// decaying like `1/(1 + |k|²)`.
pub fn random_real_field(grid: GridSpec, k: usize, rng: &mut impl Rng) -> SpectralField {
    let k = k as i64;
    let mut s = SpectralField::zeros(grid);
    for k2 in -k..=k {
        for k1 in -k..=k {
            if (k2, k1) <= (0, 0) {
                continue;
            }
            let w = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
            s.set_coeff(k1, k2, c).expect("mode inside grid");
            s.set_coeff(-k1, -k2, c.conj()).expect("mode inside grid");
        }
    }
    s
}

/// Parameters of the matrix-free semigroup subspace iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    pub tau: f64,
    /// Stop when `‖Lφ − μφ‖_{L²}` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub steps_per_tau: usize,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            tol: 1e-9,
            max_iter: 400,
            steps_per_tau: 200,
            seed: 0x5eed,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SqgError::Config(format!("tau_pow must be positive, got {}", self.tau)));
        }
        if !(self.tol > 0.0) {
            return Err(SqgError::Config("power tolerance must be positive".into()));
        }
        if self.max_iter == 0 || self.steps_per_tau == 0 {
            return Err(SqgError::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenMethod {
    Dense { cap: usize },
    SemigroupPower(PowerConfig),
}

impl EigenMethod {
    pub fn dense() -> Self {
        EigenMethod::Dense { cap: 5000 }
    }
}

/// Rightmost eigenpair of a finite section.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub truncation: usize,
    /// Sorted by decreasing real part.
    pub eigenvalues: Vec<Complex64>,
    pub rightmost: Complex64,
    /// Unit L² norm, largest coefficient real and positive.
    pub eigenfunction: SpectralField,
    /// `‖Lφ − μφ‖_{L²}` for the truncated operator.
    pub residual: f64,
    /// Subspace iterations used (matrix-free method only).
    pub iterations: Option<usize>,
}

impl SpectrumResult {
    /// `λ = Re μ`.
    pub fn lambda(&self) -> f64 {
        self.rightmost.re
    }

    /// Real field in the span of `φ` and its conjugate, normalised to
    /// `‖φ‖_{L²}`.
    pub fn real_eigenfunction(&self) -> SpectralField {
        let (a, b) = self.eigenfunction.split_real_imag();
        let target = norm(&self.eigenfunction, Norm::L2);
        let pick = if norm(&a, Norm::L2) >= 1e-3 * target { a } else { b };
        let s = norm(&pick, Norm::L2);
        pick.scaled(target / s)
    }
}

/// Default shift `δ = min(0.1, λγ/4)`.
pub fn default_delta_shift(lambda: f64, gamma: f64) -> f64 {
    (0.25 * lambda * gamma).min(0.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::field_from_fn;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn shear_op(n: usize, m: u32, a: f64) -> LinearOperator {
        LinearOperator::new(Arc::new(SteadyState::shear(grid(n), m, a).unwrap()))
    }

    #[test]
    fn trivial_state_is_minus_lambda() {
        let g = grid(16);
        let op = LinearOperator::new(Arc::new(SteadyState::zero(g)));
        let th = field_from_fn(g, |_, x2| x2.sin()).unwrap();
        let l = op.apply(&th).unwrap();
        assert!(l.sub(&th.scaled(-1.0)).unwrap().max_abs_coeff() < 1e-15);
        let op = op.with_shift(0.3).unwrap();
        let l = op.apply(&th).unwrap();
        assert!(l.sub(&th.scaled(-1.3)).unwrap().max_abs_coeff() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let op = shear_op(16, 1, 1.0);
        let th = field_from_fn(grid(32), |_, x2| x2.sin()).unwrap();
        assert!(matches!(op.apply(&th), Err(SqgError::Config(_))));
    }

    #[test]
    fn energy_identity_on_shear() {
        let op = shear_op(32, 2, 3.0);
        let st = op.steady().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for th in [st.theta0().clone(), random_real_field(grid(32), 8, &mut rng)] {
            let lhs = op.apply(&th).unwrap().inner(&th).unwrap().re;
            let hh = norm(&th, Norm::Hs(0.5)).powi(2);
            // (q·∇θ₀, θ) evaluated independently on the grid.
            let (u1, u2) = spectral::velocity_from_theta(&th).unwrap();
            let g1 = spectral::derivative(st.theta0(), spectral::Axis::X1);
            let g2 = spectral::derivative(st.theta0(), spectral::Axis::X2);
            let p = |s: &SpectralField| spectral::inverse(s).unwrap().into_values();
            let (pu1, pu2, pg1, pg2, pth) = (p(&u1), p(&u2), p(&g1), p(&g2), p(&th));
            let dx = grid(32).dx();
            let cross: f64 = (0..pth.len())
                .map(|i| (pu1[i] * pg1[i] + pu2[i] * pg2[i]) * pth[i])
                .sum::<f64>()
                * dx
                * dx;
            assert!((lhs - (-hh - cross)).abs() < 1e-10 * (hh + cross.abs()).max(1.0));
        }
    }

    #[test]
    fn dense_trivial_diagonal() {
        let op = LinearOperator::new(Arc::new(SteadyState::zero(grid(16))));
        let m = op.assemble_dense(2).unwrap();
        let basis = LinearOperator::section_basis(2);
        assert_eq!(m.dim, 24);
        for (i, &(k1, k2)) in basis.iter().enumerate() {
            for j in 0..m.dim {
                let want = if i == j { -((k1 * k1 + k2 * k2) as f64).sqrt() } else { 0.0 };
                assert!((m.get(i, j) - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_shear_sparsity() {
        let m_shear = 2i64;
        let op = shear_op(16, m_shear as u32, 1.5);
        let k = 2;
        let m = op.assemble_dense(k).unwrap();
        let basis = LinearOperator::section_basis(k);
        for (i, &(p1, p2)) in basis.iter().enumerate() {
            for (j, &(k1, k2)) in basis.iter().enumerate() {
                let allowed = p1 == k1 && (p2 == k2 || (p2 - k2).abs() == m_shear);
                let v = m.get(i, j);
                if !allowed {
                    assert_eq!(v, ZERO, "({p1},{p2}) <- ({k1},{k2})");
                }
                // Closed form of the coupling for θ₀ = −a cos(m x₂).
                if p1 == k1 && (p2 - k2).abs() == m_shear && k1 != 0 {
                    let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
                    let want = 0.75 * k1 as f64 * (m_shear as f64 / r - 1.0)
                        * (p2 - k2).signum() as f64;
                    assert!((v.re - want).abs() < 1e-13 && v.im.abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn trivial_spectrum_k3() {
        let op = LinearOperator::new(Arc::new(SteadyState::zero(grid(16))));
        let r = op.rightmost_eigenpair(3, &EigenMethod::dense()).unwrap();
        assert!((r.rightmost - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!(r.residual < 1e-12);
        let nonzero: Vec<(i64, i64)> = LinearOperator::section_basis(3)
            .into_iter()
            .filter(|&(a, b)| r.eigenfunction.coeff(a, b).norm() > 1e-8)
            .collect();
        assert!(nonzero.iter().all(|&(a, b)| a * a + b * b == 1));
        assert_relative_eq!(norm(&r.eigenfunction, Norm::L2), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn eigenvalues_come_in_conjugate_pairs() {
        let op = shear_op(32, 2, 8.0);
        let r = op.rightmost_eigenpair(6, &EigenMethod::dense()).unwrap();
        for v in &r.eigenvalues {
            let d = r
                .eigenvalues
                .iter()
                .map(|w| (w - v.conj()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-10, "{v} has no conjugate partner");
        }
    }

    #[test]
    fn dense_cap_and_resolution_errors() {
        let op = shear_op(16, 1, 1.0);
        assert!(matches!(
            op.rightmost_eigenpair(3, &EigenMethod::Dense { cap: 10 }),
            Err(SqgError::Resource(_))
        ));
        assert!(matches!(op.assemble_dense(6), Err(SqgError::Resolution(_))));
    }

    #[test]
    fn power_matches_dense_on_trivial_state() {
        let op = LinearOperator::new(Arc::new(SteadyState::zero(grid(16))));
        let r = op
            .rightmost_eigenpair(3, &EigenMethod::SemigroupPower(PowerConfig::default()))
            .unwrap();
        assert!((r.lambda() + 1.0).abs() < 1e-8);
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn linear_flow_examples() {
        let g = grid(16);
        let op = LinearOperator::new(Arc::new(SteadyState::zero(g)));
        let th = field_from_fn(g, |_, x2| x2.sin()).unwrap();
        let e = op.evolve_linear(&th, 1.0).unwrap();
        assert!(norm(&e.sub(&th.scaled((-1.0f64).exp())).unwrap(), Norm::L2) < 1e-12);
        let z = op.evolve_linear(&SpectralField::zeros(g), 1.0).unwrap();
        assert_eq!(z.max_abs_coeff(), 0.0);
    }

    #[test]
    fn smoothing_probe_rejects_nonpositive_time() {
        let g = grid(16);
        let op = shear_op(16, 1, 1.0);
        let v = field_from_fn(g, |_, x2| x2.sin()).unwrap();
        assert!(matches!(op.smoothing_probe(&v, 0.0, 0.5), Err(SqgError::Domain(_))));
        let r = op.smoothing_probe(&v, 1e-9, 0.0).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shifted_operator_validates_delta() {
        let st = Arc::new(SteadyState::zero(grid(16)));
        assert!(LinearOperator::shifted(st.clone(), 0.2, 0.04, 0.5).is_ok());
        assert!(LinearOperator::shifted(st.clone(), 0.2, 0.06, 0.5).is_err());
        assert!(LinearOperator::shifted(st, -0.2, 0.01, 0.5).is_err());
        assert_relative_eq!(default_delta_shift(0.2, 0.5), 0.025);
        assert_relative_eq!(default_delta_shift(2.0, 0.5), 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn apply_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let op = shear_op(32, 2, 4.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t1 = random_real_field(grid(32), 8, &mut rng);
            let t2 = random_real_field(grid(32), 8, &mut rng);
            let mut comb = t1.scaled(a);
            comb.axpy(b, &t2).unwrap();
            let mut want = op.apply(&t1).unwrap().scaled(a);
            want.axpy(b, &op.apply(&t2).unwrap()).unwrap();
            let got = op.apply(&comb).unwrap();
            prop_assert!(got.sub(&want).unwrap().max_abs_coeff() < 1e-12 * want.max_abs_coeff().max(1.0));
        }

        #[test]
        fn semigroup_property(seed in any::<u64>(), t in 0.05f64..0.6, s in 0.05f64..0.6) {
            let op = shear_op(32, 2, 4.0).with_truncation(6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_real_field(grid(32), 6, &mut rng);
            let whole = op.evolve_linear(&v, t + s).unwrap();
            let split = op.evolve_linear(&op.evolve_linear(&v, s).unwrap(), t).unwrap();
            prop_assert!(norm(&whole.sub(&split).unwrap(), Norm::L2) < 1e-8);
        }
    }
}
