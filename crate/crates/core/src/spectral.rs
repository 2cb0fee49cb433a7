//! Fourier representation of scalar fields on `[0, 2π]²`.
//!
//! Convention: `f(x) = Σ_k f̂_k e^{ik·x}`; the forward transform divides by
//! `n²`. Coefficients are stored row-major with `k₁` fastest, index
//! `j ↦ k` given by `j < n/2 → j`, `j = n/2 → Nyquist`, otherwise `j − n`.
//! Every multiplier and product zeroes the Nyquist rows.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Result, SqgError};
use crate::fft;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Relative tolerance used for conjugate symmetry and mean-free checks.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Square collocation grid with `n` points per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
}

/// Coordinate direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(SqgError::Config(format!(
                "grid size must be even and at least 8, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points (and stored coefficients).
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Largest wavenumber kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    /// Signed wavenumber of storage index `j` along one axis. The Nyquist
    /// index maps to `+n/2`.
    #[inline]
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    #[inline]
    pub fn is_nyquist(&self, j: usize) -> bool {
        j == self.n / 2
    }

    /// Storage index of wavenumber `k`, or `None` if `|k| > n/2`.
    pub fn axis_index(&self, k: i64) -> Option<usize> {
        let h = (self.n / 2) as i64;
        if k.abs() > h {
            return None;
        }
        Some(k.rem_euclid(self.n as i64) as usize)
    }

    pub fn index(&self, k1: i64, k2: i64) -> Option<usize> {
        Some(self.axis_index(k2)? * self.n + self.axis_index(k1)?)
    }

    /// Wavevector of flat index `idx`.
    #[inline]
    pub fn wavevector(&self, idx: usize) -> (i64, i64) {
        (self.wavenumber(idx % self.n), self.wavenumber(idx / self.n))
    }

    /// Flat index of `−k` for flat index `idx`.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        let n = self.n;
        let (j1, j2) = (idx % n, idx / n);
        ((n - j2) % n) * n + (n - j1) % n
    }

    /// Collocation point `(x₁, x₂)` of flat index `idx`.
    pub fn point(&self, idx: usize) -> (f64, f64) {
        let dx = self.dx();
        ((idx % self.n) as f64 * dx, (idx / self.n) as f64 * dx)
    }

    fn check(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(SqgError::Config(format!(
                "grid mismatch: n = {} vs n = {}",
                self.n, other.n
            )));
        }
        Ok(())
    }
}

/// Scalar field stored as Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

/// Scalar field sampled on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SqgError::Data(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (x1, x2) = grid.point(idx);
                f(x1, x2)
            })
            .collect();
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        let n = self.grid.n;
        self.values[(i2 % n) * n + i1 % n]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![ZERO; grid.len()],
        }
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(SqgError::Data(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(SqgError::Data("non-finite Fourier coefficient".into()));
        }
        Ok(Self { grid, coeffs })
    }

    /// Real field `c e^{ik·x} + conj(c) e^{−ik·x}`.
    pub fn real_mode(grid: GridSpec, k1: i64, k2: i64, c: Complex64) -> Result<Self> {
        let mut s = Self::zeros(grid);
        s.set_coeff(k1, k2, c)?;
        s.set_coeff(-k1, -k2, c.conj())?;
        if k1 == 0 && k2 == 0 {
            s.coeffs[0] = Complex64::new(c.re, 0.0);
        }
        Ok(s)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient of `e^{ik·x}`; zero outside the resolved set.
    pub fn coeff(&self, k1: i64, k2: i64) -> Complex64 {
        self.grid
            .index(k1, k2)
            .map(|i| self.coeffs[i])
            .unwrap_or(ZERO)
    }

    pub fn set_coeff(&mut self, k1: i64, k2: i64, c: Complex64) -> Result<()> {
        let idx = self.grid.index(k1, k2).ok_or_else(|| {
            SqgError::Resolution(format!(
                "mode ({k1}, {k2}) not resolved on n = {}",
                self.grid.n
            ))
        })?;
        self.coeffs[idx] = c;
        Ok(())
    }

    pub fn mean(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// True when the mean vanishes up to [`SYMMETRY_TOL`] relative to the
    /// largest coefficient.
    pub fn is_mean_free(&self) -> bool {
        self.coeffs[0].norm() <= SYMMETRY_TOL * self.max_abs_coeff()
    }

    pub fn remove_mean(&mut self) {
        self.coeffs[0] = ZERO;
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.scale(a);
        s
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: f64, x: &SpectralField) -> Result<()> {
        self.grid.check(&x.grid)?;
        for (c, xc) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += xc * a;
        }
        Ok(())
    }

    /// `self += a · x` for complex `a`.
    pub fn axpy_complex(&mut self, a: Complex64, x: &SpectralField) -> Result<()> {
        self.grid.check(&x.grid)?;
        for (c, xc) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += xc * a;
        }
        Ok(())
    }

    pub fn sub(&self, x: &SpectralField) -> Result<Self> {
        let mut s = self.clone();
        s.axpy(-1.0, x)?;
        Ok(s)
    }

    /// L² inner product `∫ a conj(b)` over the torus.
    pub fn inner(&self, other: &SpectralField) -> Result<Complex64> {
        self.grid.check(&other.grid)?;
        let mut acc = ZERO;
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            acc += a * b.conj();
        }
        Ok(acc * (4.0 * PI * PI))
    }

    /// `Σ|c|²` in storage order.
    pub(crate) fn coeff_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest `|c(k) − conj(c(−k))|`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let g = self.grid;
        let mut worst = 0.0f64;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let m = self.coeffs[g.mirror(idx)];
            worst = worst.max((c - m.conj()).norm());
        }
        worst
    }

    pub fn is_conjugate_symmetric(&self) -> bool {
        self.conjugate_symmetry_defect() <= SYMMETRY_TOL * self.max_abs_coeff().max(1e-300)
    }

    /// Split into real fields `(a, b)` with `self = a + i b`.
    pub fn split_real_imag(&self) -> (SpectralField, SpectralField) {
        let g = self.grid;
        let mut a = Self::zeros(g);
        let mut b = Self::zeros(g);
        for idx in 0..g.len() {
            let c = self.coeffs[idx];
            let m = self.coeffs[g.mirror(idx)].conj();
            a.coeffs[idx] = (c + m) * 0.5;
            b.coeffs[idx] = (c - m) * Complex64::new(0.0, -0.5);
        }
        (a, b)
    }

    /// `a + i b` from two fields on the same grid.
    pub fn combine_real_imag(a: &SpectralField, b: &SpectralField) -> Result<Self> {
        a.grid.check(&b.grid)?;
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| x + Complex64::new(0.0, 1.0) * y)
            .collect();
        Ok(Self {
            grid: a.grid,
            coeffs,
        })
    }

    /// Galerkin projection onto `0 < max|kᵢ| ≤ k_max`.
    pub fn truncated(&self, k_max: usize) -> Self {
        let g = self.grid;
        let k_max = k_max as i64;
        let mut s = self.clone();
        for (idx, c) in s.coeffs.iter_mut().enumerate() {
            let (k1, k2) = g.wavevector(idx);
            if k1.abs().max(k2.abs()) > k_max {
                *c = ZERO;
            }
        }
        s.coeffs[0] = ZERO;
        s
    }

    /// Copy onto another grid, dropping modes that do not fit and zeroing
    /// the Nyquist rows of the target.
    pub fn resample(&self, target: GridSpec) -> Self {
        let mut out = Self::zeros(target);
        let h = (target.n / 2) as i64;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let (k1, k2) = self.grid.wavevector(idx);
            if k1.abs() < h && k2.abs() < h && k1.abs() < (self.grid.n / 2) as i64
                && k2.abs() < (self.grid.n / 2) as i64
            {
                out.coeffs[target.index(k1, k2).unwrap()] = *c;
            }
        }
        out
    }

    pub(crate) fn zero_nyquist(&mut self) {
        zero_nyquist(self.grid, &mut self.coeffs);
    }
}

pub(crate) fn zero_nyquist(grid: GridSpec, coeffs: &mut [Complex64]) {
    let n = grid.n;
    let h = n / 2;
    for j1 in 0..n {
        coeffs[h * n + j1] = ZERO;
    }
    for j2 in 0..n {
        coeffs[j2 * n + h] = ZERO;
    }
}

/// Forward transform. Nyquist coefficients are kept so that the round trip
/// is exact for arbitrary grid data.
pub fn forward(p: &PhysicalField) -> Result<SpectralField> {
    if !p.is_finite() {
        return Err(SqgError::Data("non-finite value in physical field".into()));
    }
    let mut data: Vec<Complex64> = p.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_forward(p.grid, &mut data);
    Ok(SpectralField {
        grid: p.grid,
        coeffs: data,
    })
}

/// Inverse transform of a conjugate-symmetric field.
pub fn inverse(s: &SpectralField) -> Result<PhysicalField> {
    let scale = s.max_abs_coeff();
    let defect = s.conjugate_symmetry_defect();
    let tol = SYMMETRY_TOL * scale;
    if defect > tol {
        return Err(SqgError::Symmetry {
            deviation: defect / scale.max(f64::MIN_POSITIVE),
            tolerance: SYMMETRY_TOL,
        });
    }
    Ok(inverse_real_part(s))
}

/// Real part of the inverse transform without the symmetry check.
pub(crate) fn inverse_real_part(s: &SpectralField) -> PhysicalField {
    let mut data = s.coeffs.clone();
    fft::plan(s.grid.n).inverse(&mut data);
    PhysicalField {
        grid: s.grid,
        values: data.iter().map(|c| c.re).collect(),
    }
}

pub(crate) fn transform_forward(grid: GridSpec, data: &mut [Complex64]) {
    fft::plan(grid.n).forward(data);
    let inv = 1.0 / grid.len() as f64;
    for c in data.iter_mut() {
        *c *= inv;
    }
}

/// Inverse transforms of two real fields with one complex FFT.
pub(crate) fn inverse_pair(a: &[Complex64], b: &[Complex64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let i = Complex64::new(0.0, 1.0);
    let mut data: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + i * y).collect();
    fft::plan(n).inverse(&mut data);
    (
        data.iter().map(|c| c.re).collect(),
        data.iter().map(|c| c.im).collect(),
    )
}

/// Forward transform of two real grid functions with one complex FFT.
pub(crate) fn forward_pair(grid: GridSpec, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut data: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
    transform_forward(grid, &mut data);
    let mut fa = vec![ZERO; grid.len()];
    let mut fb = vec![ZERO; grid.len()];
    for idx in 0..grid.len() {
        let z = data[idx];
        let zm = data[grid.mirror(idx)].conj();
        fa[idx] = (z + zm) * 0.5;
        fb[idx] = (z - zm) * Complex64::new(0.0, -0.5);
    }
    (fa, fb)
}

/// Apply a real-wavevector multiplier, zero the Nyquist rows.
fn multiply(s: &SpectralField, symbol: impl Fn(f64, f64) -> Complex64) -> SpectralField {
    let g = s.grid;
    let mut out = s.clone();
    for (idx, c) in out.coeffs.iter_mut().enumerate() {
        let (k1, k2) = g.wavevector(idx);
        *c *= symbol(k1 as f64, k2 as f64);
    }
    out.zero_nyquist();
    out
}

fn require_mean_free(s: &SpectralField, what: &str) -> Result<()> {
    if !s.is_mean_free() {
        return Err(SqgError::Domain(format!(
            "{what} requires a mean-free field (mean = {:.3e})",
            s.coeffs[0].norm()
        )));
    }
    Ok(())
}

/// `Λ^a` with symbol `|k|^a`; the mean is always set to zero.
pub fn lambda_pow(s: &SpectralField, a: f64) -> Result<SpectralField> {
    if a < 0.0 {
        require_mean_free(s, "negative power of Λ")?;
    }
    let mut out = multiply(s, |k1, k2| {
        let r = (k1 * k1 + k2 * k2).sqrt();
        if r == 0.0 {
            ZERO
        } else {
            Complex64::new(r.powf(a), 0.0)
        }
    });
    out.coeffs[0] = ZERO;
    Ok(out)
}

/// Riesz transform `R_j = ∂_j Λ^{−1}`, symbol `i k_j / |k|`.
pub fn riesz(s: &SpectralField, axis: Axis) -> Result<SpectralField> {
    require_mean_free(s, "Riesz transform")?;
    let mut out = multiply(s, |k1, k2| {
        let r = (k1 * k1 + k2 * k2).sqrt();
        if r == 0.0 {
            return ZERO;
        }
        let kj = match axis {
            Axis::X1 => k1,
            Axis::X2 => k2,
        };
        Complex64::new(0.0, kj / r)
    });
    out.coeffs[0] = ZERO;
    Ok(out)
}

/// Velocity `U = (R₂θ, −R₁θ)`.
pub fn velocity_from_theta(s: &SpectralField) -> Result<(SpectralField, SpectralField)> {
    let u1 = riesz(s, Axis::X2)?;
    let mut u2 = riesz(s, Axis::X1)?;
    u2.scale(-1.0);
    Ok((u1, u2))
}

/// Partial derivative, symbol `i k_j`.
pub fn derivative(s: &SpectralField, axis: Axis) -> SpectralField {
    multiply(s, |k1, k2| match axis {
        Axis::X1 => Complex64::new(0.0, k1),
        Axis::X2 => Complex64::new(0.0, k2),
    })
}

/// 2/3 rule: zero every mode with `max(|k₁|, |k₂|) > n/3`.
pub fn dealias(s: &SpectralField) -> SpectralField {
    let mut out = s.clone();
    dealias_in_place(s.grid, &mut out.coeffs);
    out
}

pub(crate) fn dealias_in_place(grid: GridSpec, coeffs: &mut [Complex64]) {
    let sym = symbols(grid);
    for (c, keep) in coeffs.iter_mut().zip(&sym.keep) {
        if !keep {
            *c = ZERO;
        }
    }
}

/// Per-grid wavenumber tables for the hot loops.
pub(crate) struct Symbols {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// `1/|k|`, zero at the mean mode.
    pub inv_r: Vec<f64>,
    /// Inside the 2/3 dealias square.
    pub keep: Vec<bool>,
}

static SYMBOLS: OnceLock<Mutex<HashMap<usize, Arc<Symbols>>>> = OnceLock::new();

pub(crate) fn symbols(grid: GridSpec) -> Arc<Symbols> {
    let cache = SYMBOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("symbol cache poisoned");
    map.entry(grid.n)
        .or_insert_with(|| {
            let cut = grid.dealias_cutoff();
            let len = grid.len();
            let mut sym = Symbols {
                k1: Vec::with_capacity(len),
                k2: Vec::with_capacity(len),
                inv_r: Vec::with_capacity(len),
                keep: Vec::with_capacity(len),
            };
            for idx in 0..len {
                let (k1, k2) = grid.wavevector(idx);
                let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
                sym.k1.push(k1 as f64);
                sym.k2.push(k2 as f64);
                sym.inv_r.push(if r > 0.0 { 1.0 / r } else { 0.0 });
                sym.keep.push(k1.abs().max(k2.abs()) <= cut);
            }
            Arc::new(sym)
        })
        .clone()
}

/// Norms on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L2,
    Linf,
    LinfGrad,
    Hs(f64),
}

pub fn norm(s: &SpectralField, which: Norm) -> f64 {
    match which {
        Norm::L2 => 2.0 * PI * s.coeff_energy().sqrt(),
        Norm::Hs(sigma) => {
            let g = s.grid;
            let mut acc = 0.0;
            for (idx, c) in s.coeffs.iter().enumerate() {
                let (k1, k2) = g.wavevector(idx);
                let r2 = (k1 * k1 + k2 * k2) as f64;
                if r2 > 0.0 {
                    acc += r2.powf(sigma) * c.norm_sqr();
                }
            }
            2.0 * PI * acc.sqrt()
        }
        Norm::Linf => inverse_real_part(s).max_abs(),
        Norm::LinfGrad => {
            let d1 = derivative(s, Axis::X1);
            let d2 = derivative(s, Axis::X2);
            let (g1, g2) = inverse_pair(&d1.coeffs, &d2.coeffs, s.grid.n);
            g1.iter()
                .zip(&g2)
                .fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()))
        }
    }
}
