//! Steady states, the quadratic nonlinearity and integrating-factor RK4
//! time stepping for
//!
//! ```text
//! ∂ₜΘ + U·∇Θ + ΛΘ = f,   U = (R₂Θ, −R₁Θ).
//! ```
//!
//! In perturbation mode the evolved variable is `θ = Θ − θ₀` and the right
//! hand side is `Lθ + N(θ)`.

use std::ops::ControlFlow;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SqgError};
use crate::spectral::{
    self, dealias_in_place, forward_pair, inverse_pair, norm, Axis, GridSpec, Norm,
    PhysicalField, SpectralField,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Physical-space samples of the steady velocity and gradient.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Background {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

/// A steady triple `(θ₀, q₀, f)` with `q₀·∇θ₀ + Λθ₀ = f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    theta0: SpectralField,
    q0: (SpectralField, SpectralField),
    f: SpectralField,
    bg: Background,
}

impl SteadyState {
    /// Shear state `θ₀ = −a cos(m x₂)`, for which `q₀ = (a sin(m x₂), 0)`.
    pub fn shear(grid: GridSpec, m: u32, amplitude: f64) -> Result<Self> {
        if m == 0 {
            return Err(SqgError::Config("shear wavenumber m must be positive".into()));
        }
        if !amplitude.is_finite() {
            return Err(SqgError::Config("shear amplitude must be finite".into()));
        }
        let theta0 =
            SpectralField::real_mode(grid, 0, m as i64, Complex64::new(-0.5 * amplitude, 0.0))?;
        make_steady(theta0)
    }

    /// The trivial state `θ₀ = 0`, `f = 0`.
    pub fn zero(grid: GridSpec) -> Self {
        make_steady(SpectralField::zeros(grid)).expect("zero field is admissible")
    }

    pub fn grid(&self) -> GridSpec {
        self.theta0.grid()
    }

    pub fn theta0(&self) -> &SpectralField {
        &self.theta0
    }

    pub fn q0(&self) -> (&SpectralField, &SpectralField) {
        (&self.q0.0, &self.q0.1)
    }

    pub fn f(&self) -> &SpectralField {
        &self.f
    }

    pub(crate) fn background(&self) -> &Background {
        &self.bg
    }

    /// Largest `max(|k₁|, |k₂|)` carried by `θ₀`.
    pub fn bandwidth(&self) -> usize {
        bandwidth(&self.theta0, 1e-14) as usize
    }

    /// Background samples of `θ₀` transferred to another grid. Only the
    /// linear operator uses this, so `f` is not recomputed.
    pub(crate) fn background_on(&self, target: GridSpec) -> Background {
        background_of(&self.theta0.resample(target))
    }

    /// `‖q₀·∇θ₀ + Λθ₀ − f‖_{L∞}`, with the product formed pointwise on the
    /// doubled grid (no dealiasing involved).
    pub fn residual(&self) -> f64 {
        let g = self.grid();
        let fine = GridSpec::new(2 * g.n()).expect("doubled grid is valid");
        let th = self.theta0.resample(fine);
        let prod = fine_advection(&th);
        let mut lam = spectral::lambda_pow(&th, 1.0).expect("positive power");
        lam.axpy(-1.0, &self.f.resample(fine)).expect("same grid");
        let lin = spectral::inverse_real_part(&lam);
        prod.iter()
            .zip(lin.values())
            .fold(0.0f64, |m, (p, l)| m.max((p + l).abs()))
    }
}

/// `q·∇θ` sampled on the grid of `th`, with `q` the velocity of `th`.
fn fine_advection(th: &SpectralField) -> Vec<f64> {
    let (u1, u2) = spectral::velocity_from_theta(th).expect("mean-free input");
    let d1 = spectral::derivative(th, Axis::X1);
    let d2 = spectral::derivative(th, Axis::X2);
    let n = th.grid().n();
    let (pu1, pu2) = inverse_pair(u1.coeffs(), u2.coeffs(), n);
    let (pd1, pd2) = inverse_pair(d1.coeffs(), d2.coeffs(), n);
    (0..th.grid().len())
        .map(|i| pu1[i] * pd1[i] + pu2[i] * pd2[i])
        .collect()
}

fn bandwidth(s: &SpectralField, rel: f64) -> i64 {
    let g = s.grid();
    let tol = rel * s.max_abs_coeff();
    s.coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > tol)
        .map(|(idx, _)| {
            let (k1, k2) = g.wavevector(idx);
            k1.abs().max(k2.abs())
        })
        .max()
        .unwrap_or(0)
}

/// Compute the force `f = q₀·∇θ₀ + Λθ₀` for a chosen `θ₀`.
///
/// `θ₀` must be real, mean-free, and resolved so that the product
/// `q₀·∇θ₀` is alias-free on the grid.
pub fn make_steady(theta0: SpectralField) -> Result<SteadyState> {
    let g = theta0.grid();
    if !theta0.is_mean_free() {
        return Err(SqgError::Domain(format!(
            "steady θ₀ must be mean-free (mean = {:.3e})",
            theta0.mean().norm()
        )));
    }
    if !theta0.is_conjugate_symmetric() {
        return Err(SqgError::Symmetry {
            deviation: theta0.conjugate_symmetry_defect(),
            tolerance: spectral::SYMMETRY_TOL,
        });
    }
    let mut theta0 = theta0;
    theta0.remove_mean();
    let b = bandwidth(&theta0, 1e-14);
    if b > g.dealias_cutoff() {
        return Err(SqgError::Resolution(format!(
            "θ₀ has energy at |k| = {b}, beyond the dealias radius {}",
            g.dealias_cutoff()
        )));
    }
    // The product is exact on the doubled grid; any content it has beyond
    // the dealias radius would be lost on this grid.
    let fine = GridSpec::new(2 * g.n())?;
    let fine_prod = fine_advection(&theta0.resample(fine));
    let (fp, _) = forward_pair(fine, &fine_prod, &vec![0.0; fine.len()]);
    let fp = SpectralField::from_coeffs(fine, fp)?;
    let lost = fp
        .coeffs()
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            let (k1, k2) = fine.wavevector(*idx);
            k1.abs().max(k2.abs()) > g.dealias_cutoff()
        })
        .fold(0.0f64, |m, (_, c)| m.max(c.norm()));
    if lost > 1e-12 * fp.max_abs_coeff().max(theta0.max_abs_coeff()) {
        return Err(SqgError::Resolution(format!(
            "q₀·∇θ₀ has content beyond the dealias radius (max coefficient {lost:.3e}); refine the grid"
        )));
    }

    let (q1, q2) = spectral::velocity_from_theta(&theta0)?;
    let bg = background_of(&theta0);
    let adv = transport(g, Some(&bg), theta0.coeffs(), Terms::BACKGROUND_ONLY);
    // transport returns −(q₀·∇θ₀) restricted to the resolved modes.
    let mut f = spectral::lambda_pow(&theta0, 1.0)?;
    for (c, a) in f.coeffs_mut().iter_mut().zip(&adv) {
        *c -= a;
    }
    f.remove_mean();
    Ok(SteadyState {
        theta0,
        q0: (q1, q2),
        f,
        bg,
    })
}

fn background_of(theta0: &SpectralField) -> Background {
    let n = theta0.grid().n();
    let (q1, q2) = spectral::velocity_from_theta(theta0).expect("mean-free θ₀");
    let d1 = spectral::derivative(theta0, Axis::X1);
    let d2 = spectral::derivative(theta0, Axis::X2);
    let (pq1, pq2) = inverse_pair(q1.coeffs(), q2.coeffs(), n);
    let (pg1, pg2) = inverse_pair(d1.coeffs(), d2.coeffs(), n);
    Background {
        q1: pq1,
        q2: pq2,
        g1: pg1,
        g2: pg2,
    }
}

/// Which advection terms [`transport`] assembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Terms {
    /// `−q₀·∇θ − q·∇θ₀`
    pub linear: bool,
    /// `−q·∇θ`
    pub nonlinear: bool,
    /// `−q₀·∇θ₀`-style self advection of the input by the background only
    pub background_self: bool,
}

impl Terms {
    pub const LINEAR: Terms = Terms {
        linear: true,
        nonlinear: false,
        background_self: false,
    };
    pub const NONLINEAR: Terms = Terms {
        linear: false,
        nonlinear: true,
        background_self: false,
    };
    pub const BOTH: Terms = Terms {
        linear: true,
        nonlinear: true,
        background_self: false,
    };
    const BACKGROUND_ONLY: Terms = Terms {
        linear: false,
        nonlinear: false,
        background_self: true,
    };
}

/// Dealiased advection terms of a real field given by its coefficients.
/// The output is mean-free with zeroed Nyquist rows.
pub(crate) fn transport(
    grid: GridSpec,
    bg: Option<&Background>,
    theta: &[Complex64],
    terms: Terms,
) -> Vec<Complex64> {
    let len = grid.len();
    let n = grid.n();
    let sym = spectral::symbols(grid);

    let mut uc1 = vec![ZERO; len];
    let mut uc2 = vec![ZERO; len];
    let mut dc1 = vec![ZERO; len];
    let mut dc2 = vec![ZERO; len];
    for idx in 0..len {
        let c = theta[idx];
        if !sym.keep[idx] || c == ZERO {
            continue;
        }
        let (k1, k2, ir) = (sym.k1[idx], sym.k2[idx], sym.inv_r[idx]);
        let ic = Complex64::new(-c.im, c.re);
        uc1[idx] = ic * (k2 * ir);
        uc2[idx] = ic * (-k1 * ir);
        dc1[idx] = ic * k1;
        dc2[idx] = ic * k2;
    }
    let (u1, u2) = inverse_pair(&uc1, &uc2, n);
    let (d1, d2) = inverse_pair(&dc1, &dc2, n);

    let mut prod = vec![0.0; len];
    match (bg, terms.linear || terms.background_self) {
        (Some(bg), true) => {
            for i in 0..len {
                let mut a1 = 0.0;
                let mut a2 = 0.0;
                let mut extra = 0.0;
                if terms.linear || terms.background_self {
                    a1 += bg.q1[i];
                    a2 += bg.q2[i];
                }
                if terms.linear {
                    extra = u1[i] * bg.g1[i] + u2[i] * bg.g2[i];
                }
                if terms.nonlinear {
                    a1 += u1[i];
                    a2 += u2[i];
                }
                prod[i] = -(a1 * d1[i] + a2 * d2[i] + extra);
            }
        }
        _ => {
            if terms.nonlinear {
                for i in 0..len {
                    prod[i] = -(u1[i] * d1[i] + u2[i] * d2[i]);
                }
            }
        }
    }
    let mut out: Vec<Complex64> = prod.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spectral::transform_forward(grid, &mut out);
    dealias_in_place(grid, &mut out);
    spectral::zero_nyquist(grid, &mut out);
    out[0] = ZERO;
    out
}

/// `N(θ) = −q·∇θ` with `q = (R₂θ, −R₁θ)`, dealiased.
pub fn nonlinear_term(theta: &SpectralField) -> Result<SpectralField> {
    require_real_mean_free(theta)?;
    let out = transport(theta.grid(), None, theta.coeffs(), Terms::NONLINEAR);
    SpectralField::from_coeffs(theta.grid(), out)
}

pub(crate) fn require_real_mean_free(theta: &SpectralField) -> Result<()> {
    if !theta.is_mean_free() {
        return Err(SqgError::Domain(format!(
            "field must be mean-free (mean = {:.3e})",
            theta.mean().norm()
        )));
    }
    if !theta.is_conjugate_symmetric() {
        return Err(SqgError::Symmetry {
            deviation: theta.conjugate_symmetry_defect(),
            tolerance: spectral::SYMMETRY_TOL,
        });
    }
    Ok(())
}

/// `|k|` for every stored index.
pub(crate) fn abs_k(grid: GridSpec) -> Vec<f64> {
    (0..grid.len())
        .map(|idx| {
            let (k1, k2) = grid.wavevector(idx);
            ((k1 * k1 + k2 * k2) as f64).sqrt()
        })
        .collect()
}

/// One Lawson (integrating-factor) RK4 step of `v' = −r v + F(v)` with a
/// diagonal rate `r`.
pub(crate) fn if_rk4_step(
    v: &[Complex64],
    dt: f64,
    rates: &[f64],
    explicit: impl Fn(&[Complex64]) -> Vec<Complex64>,
) -> Vec<Complex64> {
    let len = v.len();
    let e: Vec<f64> = rates.iter().map(|r| (-r * dt * 0.5).exp()).collect();
    let h = 0.5 * dt;
    let a = explicit(v);
    let s2: Vec<Complex64> = (0..len).map(|i| (v[i] + a[i] * h) * e[i]).collect();
    let b = explicit(&s2);
    let s3: Vec<Complex64> = (0..len).map(|i| v[i] * e[i] + b[i] * h).collect();
    let c = explicit(&s3);
    let s4: Vec<Complex64> = (0..len)
        .map(|i| v[i] * (e[i] * e[i]) + c[i] * (dt * e[i]))
        .collect();
    let d = explicit(&s4);
    (0..len)
        .map(|i| {
            let e1 = e[i];
            let e2 = e1 * e1;
            v[i] * e2 + (a[i] * e2 + (b[i] + c[i]) * (2.0 * e1) + d[i]) * (dt / 6.0)
        })
        .collect()
}

/// Evolved variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The full field `Θ`.
    Full,
    /// The perturbation `θ = Θ − θ₀`.
    Perturbation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub theta: SpectralField,
    pub t: f64,
    pub mode: Mode,
}

impl EvolutionState {
    pub fn new(theta: SpectralField, mode: Mode) -> Result<Self> {
        require_real_mean_free(&theta)?;
        let mut theta = theta;
        theta.remove_mean();
        Ok(Self {
            theta,
            t: 0.0,
            mode,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub cfl: f64,
    pub dt_max: f64,
    /// Time between observer calls.
    pub observe_every: f64,
    /// The run halts when `‖∇Θ‖_{L∞}` exceeds this factor times its
    /// initial value (floored at 1).
    pub guard_factor: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            dt_max: 1e-2,
            observe_every: 0.1,
            guard_factor: 1e3,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SqgError::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(SqgError::Config(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.observe_every > 0.0 && self.observe_every.is_finite()) {
            return Err(SqgError::Config(format!(
                "observe_every must be positive, got {}",
                self.observe_every
            )));
        }
        if !(self.guard_factor > 1.0) {
            return Err(SqgError::Config("guard_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Norms recorded at an observer tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    /// `‖·‖_{L²}` of the evolved variable.
    pub l2: f64,
    /// `‖Θ‖_{L∞}` of the full field.
    pub linf: f64,
    /// `‖∇Θ‖_{L∞}` of the full field.
    pub linf_grad: f64,
    /// `‖·‖_{Ḣ^{1/2}}` of the evolved variable.
    pub hhalf: f64,
    /// `d/dt ‖·‖²_{L²} = 2(rhs, ·)` of the evolved variable.
    pub energy_flux: f64,
}

/// The forced SQG system about a steady state.
#[derive(Debug, Clone)]
pub struct QgSystem {
    steady: Arc<SteadyState>,
    abs_k: Vec<f64>,
}

impl QgSystem {
    pub fn new(steady: Arc<SteadyState>) -> Self {
        let abs_k = abs_k(steady.grid());
        Self { steady, abs_k }
    }

    /// System with `θ₀ = 0`, `f = 0`.
    pub fn unforced(grid: GridSpec) -> Self {
        Self::new(Arc::new(SteadyState::zero(grid)))
    }

    pub fn steady(&self) -> &Arc<SteadyState> {
        &self.steady
    }

    pub fn grid(&self) -> GridSpec {
        self.steady.grid()
    }

    fn check(&self, state: &EvolutionState) -> Result<()> {
        if state.theta.grid() != self.grid() {
            return Err(SqgError::Config(format!(
                "state grid n = {} does not match system grid n = {}",
                state.theta.grid().n(),
                self.grid().n()
            )));
        }
        Ok(())
    }

    /// Everything except `−Λ` (the integrating-factor part).
    fn explicit(&self, mode: Mode, v: &[Complex64]) -> Vec<Complex64> {
        let g = self.grid();
        match mode {
            Mode::Full => {
                let mut out = transport(g, None, v, Terms::NONLINEAR);
                for (o, f) in out.iter_mut().zip(self.steady.f.coeffs()) {
                    *o += f;
                }
                out
            }
            Mode::Perturbation => transport(g, Some(&self.steady.bg), v, Terms::BOTH),
        }
    }

    /// `∂ₜ` of the evolved variable.
    pub fn rhs(&self, state: &EvolutionState) -> Result<SpectralField> {
        self.check(state)?;
        let v = state.theta.coeffs();
        let mut out = self.explicit(state.mode, v);
        for i in 0..out.len() {
            out[i] -= v[i] * self.abs_k[i];
        }
        spectral::zero_nyquist(self.grid(), &mut out);
        out[0] = ZERO;
        SpectralField::from_coeffs(self.grid(), out)
    }

    /// Full field `Θ` of a state.
    pub fn full_field(&self, state: &EvolutionState) -> SpectralField {
        match state.mode {
            Mode::Full => state.theta.clone(),
            Mode::Perturbation => {
                let mut s = state.theta.clone();
                s.axpy(1.0, &self.steady.theta0).expect("same grid");
                s
            }
        }
    }

    /// `min(dt_max, cfl·Δx/‖U‖_{L∞})` with `U` the full velocity.
    pub fn cfl_dt(&self, state: &EvolutionState, cfg: &StepperConfig) -> f64 {
        let full = self.full_field(state);
        let g = self.grid();
        let sym = spectral::symbols(g);
        let mut u1 = vec![ZERO; g.len()];
        let mut u2 = vec![ZERO; g.len()];
        for (idx, c) in full.coeffs().iter().enumerate() {
            // Riesz symbols; the Nyquist rows carry nothing
            if g.is_nyquist(idx % g.n()) || g.is_nyquist(idx / g.n()) {
                continue;
            }
            let ic = Complex64::new(-c.im, c.re) * sym.inv_r[idx];
            u1[idx] = ic * sym.k2[idx];
            u2[idx] = ic * (-sym.k1[idx]);
        }
        let (p1, p2) = inverse_pair(&u1, &u2, g.n());
        let umax = p1
            .iter()
            .zip(&p2)
            .fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()));
        cfl_formula(cfg, self.grid(), umax)
    }

    /// One integrating-factor RK4 step.
    pub fn step(&self, state: &EvolutionState, dt: f64) -> Result<EvolutionState> {
        self.check(state)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SqgError::Domain(format!("time step must be positive, got {dt}")));
        }
        let mut next = if_rk4_step(state.theta.coeffs(), dt, &self.abs_k, |v| {
            self.explicit(state.mode, v)
        });
        spectral::zero_nyquist(self.grid(), &mut next);
        next[0] = ZERO;
        let t = state.t + dt;
        if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(SqgError::BlowUp {
                t,
                reason: "non-finite Fourier coefficient".into(),
            });
        }
        Ok(EvolutionState {
            theta: SpectralField::from_coeffs(self.grid(), next)?,
            t,
            mode: state.mode,
        })
    }

    pub fn observe(&self, state: &EvolutionState) -> Result<Observation> {
        let full = self.full_field(state);
        let rhs = self.rhs(state)?;
        Ok(Observation {
            t: state.t,
            l2: norm(&state.theta, Norm::L2),
            linf: norm(&full, Norm::Linf),
            linf_grad: norm(&full, Norm::LinfGrad),
            hhalf: norm(&state.theta, Norm::Hs(0.5)),
            energy_flux: 2.0 * rhs.inner(&state.theta)?.re,
        })
    }

    /// Integrate to `t_end`, calling `observer` at `state.t`, at every
    /// multiple of `cfg.observe_every` and at `t_end`. The observer may stop
    /// the run early by returning `ControlFlow::Break`.
    pub fn evolve<F>(
        &self,
        state: EvolutionState,
        t_end: f64,
        cfg: &StepperConfig,
        mut observer: F,
    ) -> Result<EvolutionState>
    where
        F: FnMut(&EvolutionState, &Observation) -> ControlFlow<()>,
    {
        cfg.validate()?;
        self.check(&state)?;
        let first = self.observe(&state)?;
        let guard = cfg.guard_factor * first.linf_grad.max(1.0);
        if observer(&state, &first).is_break() {
            return Ok(state);
        }
        let mut state = state;
        let t0 = state.t;
        let mut tick = 1u64;
        let tol = 1e-12 * t_end.abs().max(1.0);
        while state.t < t_end - tol {
            let next_obs = (t0 + tick as f64 * cfg.observe_every).min(t_end);
            let mut dt = self.cfl_dt(&state, cfg);
            let hit = state.t + dt >= next_obs - tol;
            if hit {
                dt = next_obs - state.t;
            }
            state = self.step(&state, dt)?;
            if hit {
                state.t = next_obs;
                tick += 1;
                let obs = self.observe(&state)?;
                if !(obs.linf_grad <= guard) {
                    return Err(SqgError::BlowUp {
                        t: state.t,
                        reason: format!(
                            "‖∇Θ‖_L∞ = {:.6e} exceeds the guard {guard:.6e}",
                            obs.linf_grad
                        ),
                    });
                }
                if observer(&state, &obs).is_break() {
                    break;
                }
            }
        }
        Ok(state)
    }

    /// [`evolve`](Self::evolve) collecting every observation.
    pub fn evolve_recorded(
        &self,
        state: EvolutionState,
        t_end: f64,
        cfg: &StepperConfig,
    ) -> Result<(EvolutionState, Vec<Observation>)> {
        let mut rec = Vec::new();
        let fin = self.evolve(state, t_end, cfg, |_, o| {
            rec.push(*o);
            ControlFlow::Continue(())
        })?;
        Ok((fin, rec))
    }
}

pub(crate) fn cfl_formula(cfg: &StepperConfig, grid: GridSpec, umax: f64) -> f64 {
    if umax > 0.0 {
        cfg.dt_max.min(cfg.cfl * grid.dx() / umax)
    } else {
        cfg.dt_max
    }
}

/// Sample a physical field from its formula and return its mean-free
/// coefficients.
pub fn field_from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<SpectralField> {
    let mut s = spectral::forward(&PhysicalField::from_fn(grid, f))?;
    s.zero_nyquist();
    s.remove_mean();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn random_field(g: GridSpec, kmax: i64, amp: f64, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SpectralField::zeros(g);
        for k2 in -kmax..=kmax {
            for k1 in -kmax..=kmax {
                if (k2, k1) <= (0, 0) {
                    continue;
                }
                let decay = amp / (1.0 + (k1 * k1 + k2 * k2) as f64);
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
                s.set_coeff(k1, k2, c).unwrap();
                s.set_coeff(-k1, -k2, c.conj()).unwrap();
            }
        }
        s
    }

    #[test]
    fn shear_steady_state() {
        let g = grid(32);
        for m in 1..=4u32 {
            let st = SteadyState::shear(g, m, 1.0).unwrap();
            let want_q = field_from_fn(g, |_, x2| (m as f64 * x2).sin()).unwrap();
            let want_f = field_from_fn(g, |_, x2| -(m as f64) * (m as f64 * x2).cos()).unwrap();
            assert!(st.q0().0.sub(&want_q).unwrap().max_abs_coeff() < 1e-15);
            assert!(st.q0().1.max_abs_coeff() < 1e-15);
            assert!(st.f().sub(&want_f).unwrap().max_abs_coeff() < 1e-14);
            assert!(st.residual() < 1e-10);
        }
    }

    #[test]
    fn zero_steady_state() {
        let st = SteadyState::zero(grid(16));
        assert_eq!(st.f().max_abs_coeff(), 0.0);
        assert_eq!(st.residual(), 0.0);
    }

    #[test]
    fn make_steady_rejects_mean_and_unresolved() {
        let g = grid(16);
        let mut th = field_from_fn(g, |x1, _| x1.sin()).unwrap();
        th.coeffs_mut()[0] = Complex64::new(0.5, 0.0);
        assert!(matches!(make_steady(th), Err(SqgError::Domain(_))));
        let hi = SpectralField::real_mode(g, 6, 0, Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(make_steady(hi), Err(SqgError::Resolution(_))));
        // Bandwidth 4 on n = 16 passes the 2/3 cut but its product reaches 8.
        let th = field_from_fn(g, |x1, x2| (4.0 * x1).sin() + (4.0 * x1 + x2).cos()).unwrap();
        assert!(matches!(make_steady(th), Err(SqgError::Resolution(_))));
    }

    #[test]
    fn mixed_steady_state_residual() {
        let g = grid(32);
        let th = field_from_fn(g, |x1, x2| x1.sin() + (2.0 * x2).cos()).unwrap();
        let st = make_steady(th).unwrap();
        assert!(st.residual() < 1e-10);
        // Advection is genuinely present here.
        let adv = nonlinear_term(st.theta0()).unwrap();
        assert!(adv.max_abs_coeff() > 0.1);
    }

    #[test]
    fn single_modes_do_not_self_advect() {
        let g = grid(16);
        for th in [
            field_from_fn(g, |x1, _| x1.sin()).unwrap(),
            field_from_fn(g, |_, x2| x2.sin()).unwrap(),
        ] {
            assert!(nonlinear_term(&th).unwrap().max_abs_coeff() < 1e-15);
        }
    }

    #[test]
    fn nonlinearity_is_energy_neutral() {
        let g = grid(32);
        let th = field_from_fn(g, |x1, x2| x1.sin() + (2.0 * x2).sin()).unwrap();
        let nl = nonlinear_term(&th).unwrap();
        let ip = nl.inner(&th).unwrap();
        assert!(ip.norm() < 1e-10 * norm(&th, Norm::L2).powi(2));
        for seed in 0..5 {
            let th = random_field(g, 8, 1.0, seed);
            let ip = nonlinear_term(&th).unwrap().inner(&th).unwrap();
            assert!(ip.norm() < 1e-10 * norm(&th, Norm::L2).powi(2));
        }
    }

    #[test]
    fn rhs_examples() {
        let g = grid(32);
        let st = Arc::new(make_steady(field_from_fn(g, |x1, x2| x1.sin() + (2.0 * x2).cos()).unwrap()).unwrap());
        let sys = QgSystem::new(st.clone());
        let s = EvolutionState::new(st.theta0().clone(), Mode::Full).unwrap();
        assert!(norm(&sys.rhs(&s).unwrap(), Norm::Linf) < 1e-10);

        let sys0 = QgSystem::unforced(g);
        let th = field_from_fn(g, |x1, _| x1.sin()).unwrap();
        let r = sys0.rhs(&EvolutionState::new(th.clone(), Mode::Full).unwrap()).unwrap();
        assert!(r.sub(&th.scaled(-1.0)).unwrap().max_abs_coeff() < 1e-15);
    }

    #[test]
    fn modes_agree_on_rhs() {
        let g = grid(32);
        let st = Arc::new(SteadyState::shear(g, 2, 3.0).unwrap());
        let sys = QgSystem::new(st.clone());
        let th = random_field(g, 6, 0.1, 5);
        let mut full = th.clone();
        full.axpy(1.0, st.theta0()).unwrap();
        let r1 = sys.rhs(&EvolutionState::new(th, Mode::Perturbation).unwrap()).unwrap();
        let r2 = sys.rhs(&EvolutionState::new(full, Mode::Full).unwrap()).unwrap();
        assert!(r1.sub(&r2).unwrap().max_abs_coeff() < 1e-13);
    }

    #[test]
    fn cfl_examples() {
        let g64 = grid(64);
        let cfg = StepperConfig {
            cfl: 0.5,
            dt_max: 1.0,
            ..StepperConfig::default()
        };
        let sys = QgSystem::unforced(g64);
        let zero = EvolutionState::new(SpectralField::zeros(g64), Mode::Full).unwrap();
        assert_eq!(sys.cfl_dt(&zero, &cfg), 1.0);
        let th = field_from_fn(g64, |_, x2| -x2.cos()).unwrap();
        let s = EvolutionState::new(th.clone(), Mode::Full).unwrap();
        let dt64 = sys.cfl_dt(&s, &cfg);
        assert!((dt64 - 0.5 * 2.0 * PI / 64.0).abs() < 1e-14);
        let g128 = grid(128);
        let sys128 = QgSystem::unforced(g128);
        let s128 = EvolutionState::new(th.resample(g128), Mode::Full).unwrap();
        assert!((sys128.cfl_dt(&s128, &cfg) - 0.5 * dt64).abs() < 1e-14);
    }

    #[test]
    fn single_mode_decay() {
        let g = grid(64);
        let sys = QgSystem::unforced(g);
        let th = field_from_fn(g, |x1, _| x1.sin()).unwrap();
        let mut s = EvolutionState::new(th.clone(), Mode::Full).unwrap();
        for _ in 0..1000 {
            s = sys.step(&s, 1e-3).unwrap();
        }
        let err = s.theta.sub(&th.scaled((-1.0f64).exp())).unwrap();
        assert!(norm(&err, Norm::L2) < 1e-8);
        assert!((s.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_reported() {
        let g = grid(16);
        let sys = QgSystem::unforced(g);
        let mut th = SpectralField::zeros(g);
        th.set_coeff(1, 0, Complex64::new(1e308, 0.0)).unwrap();
        th.set_coeff(-1, 0, Complex64::new(1e308, 0.0)).unwrap();
        th.set_coeff(0, 1, Complex64::new(1e308, 0.0)).unwrap();
        th.set_coeff(0, -1, Complex64::new(1e308, 0.0)).unwrap();
        let s = EvolutionState::new(th, Mode::Full).unwrap();
        assert!(matches!(sys.step(&s, 0.1), Err(SqgError::BlowUp { .. })));
    }

    #[test]
    fn observer_cadence() {
        let g = grid(16);
        let sys = QgSystem::unforced(g);
        let th = field_from_fn(g, |x1, _| x1.sin()).unwrap();
        let cfg = StepperConfig {
            dt_max: 0.03,
            observe_every: 0.25,
            ..StepperConfig::default()
        };
        let (fin, rec) = sys
            .evolve_recorded(EvolutionState::new(th, Mode::Full).unwrap(), 1.1, &cfg)
            .unwrap();
        let ts: Vec<f64> = rec.iter().map(|o| o.t).collect();
        assert_eq!(ts, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.1]);
        assert_eq!(fin.t, 1.1);
    }
}
