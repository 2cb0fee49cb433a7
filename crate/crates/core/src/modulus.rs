//! The nonlocal maximum principle for forced critical SQG: the modulus of
//! continuity `ω`, its rescaling `ω_B(ξ) = ω(Bξ)`, the scale selection for `B`,
//! the bounds `Ω_B`, `M_B`, `F_B`, and an empirical modulus check on fields.
//!
//! `B` is routinely far outside the range of `f64` (the forcing condition asks
//! for `ω(Bd)` of order `‖f‖`, and `ω` grows like `γ ln ln`), so it is stored
//! through its *level* `β = ln(1 + ¼ ln(B/δ))`. Points are carried in the
//! rescaled variable `s = Bξ`, either directly (`s ≤ δ`) or through the same
//! level coordinate. Every functional is evaluated on `s`; quantities that
//! multiply by `ξ` are formed only at the end.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SqgError};
use crate::quadrature::{integrate, QuadConfig, QuadValue};
use crate::spectral::{norm, Norm, PhysicalField, SpectralField};

/// Diameter of the torus `[0, 2π)²`.
pub const DIAMETER: f64 = 2.0 * PI * SQRT_2;

const LN_4: f64 = 2.0 * LN_2;
// Above this level `ln(B/δ)` is no longer representable.
const LEVEL_EXP_LIMIT: f64 = 700.0;

/// Shape constants of the modulus and the constants of the scale conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusParams {
    pub delta: f64,
    pub gamma: f64,
    /// Constant of the velocity-modulus bound.
    pub a: f64,
    /// Constant in the gradient/sup scale condition.
    pub c_big: f64,
}

impl Default for ModulusParams {
    fn default() -> Self {
        Self {
            delta: 1e-2,
            gamma: 1e-2,
            a: 1.0,
            c_big: 10.0,
        }
    }
}

impl ModulusParams {
    pub fn new(delta: f64, gamma: f64, a: f64, c_big: f64) -> Result<Self> {
        let p = Self {
            delta,
            gamma,
            a,
            c_big,
        };
        p.validate()?;
        Ok(p)
    }

    /// Accepts `0 < γ ≤ δ < 1` (the default sits on `γ = δ`) and also requires `δ < 4/9` (the first branch
    /// is increasing) and a slope that does not jump up across the seam, so
    /// that `ω` is a genuine concave modulus.
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.delta) && ok(self.gamma) && ok(self.a) && ok(self.c_big)) {
            return Err(SqgError::Config(
                "modulus constants must be finite and positive".into(),
            ));
        }
        if !(self.gamma <= self.delta && self.delta < 1.0) {
            return Err(SqgError::Config(format!(
                "need 0 < γ ≤ δ < 1, got δ = {}, γ = {}",
                self.delta, self.gamma
            )));
        }
        let left = 1.0 - 1.5 * self.delta.sqrt();
        if left <= 0.0 {
            return Err(SqgError::Config(format!(
                "δ = {} is not below 4/9; the first branch is not increasing",
                self.delta
            )));
        }
        let right = self.gamma / (4.0 * self.delta);
        if right > left {
            return Err(SqgError::Config(format!(
                "slope jumps up across the seam ({right:.4} > {left:.4}); ω is not concave"
            )));
        }
        Ok(())
    }

    /// `ω(δ)`, the value at the seam.
    pub fn seam_value(&self) -> f64 {
        self.delta - self.delta.powf(1.5)
    }

    /// Coefficient `Aγ + 1/(2π) − 1/π` of the large-separation regime.
    pub fn regime_coefficient(&self) -> f64 {
        self.a * self.gamma + 0.5 / PI - 1.0 / PI
    }

    /// Bracket `A(4 + ln(δ/s)) − (3/4π) s^{−1/2}` of the small-separation
    /// regime, at `s = Bξ ≤ δ`.
    pub fn small_regime_bracket(&self, s: f64) -> f64 {
        self.a * (4.0 + (self.delta / s).ln()) - 0.75 / PI / s.sqrt()
    }
}

/// A point of the rescaled variable `s = Bξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaled {
    /// `s ≤ δ`, stored directly.
    Lin(f64),
    /// `s > δ`, stored as `ℓ = ln(1 + ¼ ln(s/δ)) > 0`.
    Log { level: f64 },
}

fn kappa(level: f64) -> f64 {
    if level > LEVEL_EXP_LIMIT {
        f64::INFINITY
    } else {
        4.0 * level.exp_m1()
    }
}

/// `1/(4 + ln(s/δ))`.
fn inv(level: f64) -> f64 {
    0.25 * (-level).exp()
}

/// `ln(e^ℓ + c)` without overflowing for large `ℓ`.
fn ln_exp_plus(level: f64, c: f64) -> f64 {
    if level < LEVEL_EXP_LIMIT {
        (level.exp() + c).ln()
    } else {
        level + (c * (-level).exp()).ln_1p()
    }
}

/// `(1+x)^{3/2} + (1−x)^{3/2} − 2` for `0 ≤ x ≤ 1`, by its even binomial
/// series when the direct form would cancel.
fn sym_three_halves(x: f64) -> f64 {
    if x >= 0.5 {
        return (1.0 + x).powf(1.5) + (1.0 - x).powf(1.5) - 2.0;
    }
    let x2 = x * x;
    let mut c = 1.0f64;
    let mut pow = 1.0f64;
    let mut sum = 0.0f64;
    for j in 0..120 {
        // c = binom(3/2, j); keep even orders only
        if j > 0 && j % 2 == 0 {
            let term = 2.0 * c * pow;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        c *= (1.5 - j as f64) / (j as f64 + 1.0);
        if j % 2 == 1 {
            pow *= x2;
        }
    }
    sum
}

/// `ω` and its scale `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus {
    params: ModulusParams,
    level: f64,
}

impl Modulus {
    /// `B` must exceed `δe^{−4}` so that its level is defined.
    pub fn new(params: ModulusParams, b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(SqgError::Config(format!("B must be finite and positive, got {b}")));
        }
        Self::from_ln_b(params, b.ln())
    }

    pub fn from_ln_b(params: ModulusParams, ln_b: f64) -> Result<Self> {
        params.validate()?;
        let x = 0.25 * (ln_b - params.delta.ln());
        if ln_b.is_nan() || x <= -1.0 {
            return Err(SqgError::Config(format!(
                "ln B = {ln_b} is below the representable range ln δ − 4"
            )));
        }
        Self::from_level(params, x.ln_1p())
    }

    pub fn from_level(params: ModulusParams, level: f64) -> Result<Self> {
        params.validate()?;
        if !level.is_finite() {
            return Err(SqgError::Config(format!("scale level must be finite, got {level}")));
        }
        Ok(Self { params, level })
    }

    pub fn params(&self) -> &ModulusParams {
        &self.params
    }

    /// `β = ln(1 + ¼ ln(B/δ))`.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// `ln B`; `+∞` once it leaves the range of `f64`.
    pub fn ln_b(&self) -> f64 {
        self.params.delta.ln() + kappa(self.level)
    }

    /// `B`, saturating to `+∞`.
    pub fn b(&self) -> f64 {
        self.ln_b().exp()
    }

    /// The seam `δ/B`, possibly underflowing to zero.
    pub fn seam(&self) -> f64 {
        (-kappa(self.level)).exp()
    }

    /// Same modulus with `B` multiplied by `factor`.
    pub fn scaled_by(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(SqgError::Config(format!("scale factor must be positive, got {factor}")));
        }
        let level = ln_exp_plus(self.level, 0.25 * factor.ln());
        if !(level.is_finite() && level > -f64::INFINITY) || level.is_nan() {
            return Err(SqgError::Config("rescaled level is not representable".into()));
        }
        Self::from_level(self.params, level)
    }

    /// Rescaled point `s = Bξ`.
    pub fn point(&self, xi: f64) -> Scaled {
        let lbd = kappa(self.level);
        let lx = xi.ln();
        if lbd.is_finite() {
            let k = lbd + lx;
            if k <= 0.0 {
                Scaled::Lin(self.params.delta * k.exp())
            } else {
                Scaled::Log {
                    level: (0.25 * k).ln_1p(),
                }
            }
        } else {
            Scaled::Log {
                level: ln_exp_plus(self.level, 0.25 * lx),
            }
        }
    }

    /// Physical separation of a rescaled point; zero when it underflows.
    pub fn xi_of(&self, p: Scaled) -> f64 {
        let lbd = kappa(self.level);
        match p {
            Scaled::Lin(s) => (s.ln() - self.params.delta.ln() - lbd).exp(),
            Scaled::Log { level } => {
                let k = kappa(level);
                if k.is_finite() && lbd.is_finite() {
                    (k - lbd).exp()
                } else {
                    // ln ξ = 4(e^ℓ − e^β) = 4 e^β expm1(ℓ − β)
                    let e = (level - self.level).exp_m1();
                    if e == 0.0 {
                        1.0
                    } else {
                        (e.signum() * (LN_4 + self.level + e.abs().ln()).exp()).exp()
                    }
                }
            }
        }
    }

    /// `ω(s)`.
    pub fn omega_at(&self, p: Scaled) -> f64 {
        match p {
            Scaled::Lin(s) => s - s.powf(1.5),
            Scaled::Log { level } => self.params.seam_value() + self.params.gamma * level,
        }
    }

    /// `s ω'(s)`.
    pub fn s_omega_prime(&self, p: Scaled) -> f64 {
        match p {
            Scaled::Lin(s) => s - 1.5 * s.powf(1.5),
            Scaled::Log { level } => self.params.gamma * inv(level),
        }
    }

    /// `s² ω''(s)`.
    pub fn s2_omega_second(&self, p: Scaled) -> f64 {
        match p {
            Scaled::Lin(s) => -0.75 * s.powf(1.5),
            Scaled::Log { level } => {
                let i = inv(level);
                -self.params.gamma * i * (1.0 + i)
            }
        }
    }

    /// The point `s·r`; negative `r` (from rounding) is read as zero.
    pub fn shift(&self, p: Scaled, r: f64) -> Scaled {
        let delta = self.params.delta;
        let r = r.max(0.0);
        match p {
            Scaled::Lin(s) => {
                let t = s * r;
                if t <= delta {
                    Scaled::Lin(t)
                } else {
                    Scaled::Log {
                        level: (0.25 * (t / delta).ln()).ln_1p(),
                    }
                }
            }
            Scaled::Log { level } => {
                let y = r.ln() * inv(level);
                if y > -1.0 {
                    let l2 = level + y.ln_1p();
                    if l2 > 0.0 {
                        return Scaled::Log { level: l2 };
                    }
                }
                Scaled::Lin(delta * (kappa(level) + r.ln()).exp())
            }
        }
    }

    /// `ω(sr) − ω(s)`.
    pub fn diff(&self, p: Scaled, r: f64) -> f64 {
        let r = r.max(0.0);
        let q = self.shift(p, r);
        match (p, q) {
            (Scaled::Log { level }, Scaled::Log { .. }) => {
                self.params.gamma * (r.ln() * inv(level)).ln_1p()
            }
            (Scaled::Lin(s), Scaled::Lin(_)) => {
                s * (r - 1.0) - s.powf(1.5) * (1.5 * r.ln()).exp_m1()
            }
            _ => self.omega_at(q) - self.omega_at(p),
        }
    }

    /// `ω(s(1+x)) + ω(s(1−x)) − 2ω(s)` for `0 < x < 1`.
    fn sym2(&self, p: Scaled, x: f64) -> f64 {
        let up = self.shift(p, 1.0 + x);
        let dn = self.shift(p, 1.0 - x);
        match (p, up, dn) {
            (Scaled::Lin(s), Scaled::Lin(_), _) => -s.powf(1.5) * sym_three_halves(x),
            (Scaled::Log { level }, _, Scaled::Log { .. }) => {
                let i = inv(level);
                let lp = x.ln_1p();
                let lm = (-x).ln_1p();
                self.params.gamma * (i * (-x * x).ln_1p() + i * i * lp * lm).ln_1p()
            }
            _ => self.diff(p, 1.0 + x) + self.diff(p, 1.0 - x),
        }
    }

    /// `δ/s` in ratio units.
    fn seam_ratio(&self, p: Scaled) -> f64 {
        match p {
            Scaled::Lin(s) => self.params.delta / s,
            Scaled::Log { level } => (-kappa(level)).exp(),
        }
    }

    pub fn omega_b(&self, xi: f64) -> f64 {
        self.omega_at(self.point(xi))
    }

    /// `ω_B'(ξ) = Bω'(Bξ)`; at `ξ = 0` this is `B`.
    pub fn omega_b_prime(&self, xi: f64) -> f64 {
        if xi == 0.0 {
            return self.b();
        }
        self.s_omega_prime(self.point(xi)) / xi
    }

    pub fn omega_b_second(&self, xi: f64) -> f64 {
        self.s2_omega_second(self.point(xi)) / (xi * xi)
    }

    /// `∫₀^s ω(σ)/σ dσ` (a function of `s` only).
    fn inner_integral(&self, p: Scaled, cfg: &QuadConfig) -> Result<QuadValue> {
        match p {
            Scaled::Lin(_) => integrate(|r| self.omega_at(self.shift(p, r)) / r, 0.0, 1.0, &[], cfg),
            Scaled::Log { level } => {
                // seam part ∫₀^δ ω/σ plus the log branch integrated exactly
                let d = self.params.delta;
                let k = kappa(level);
                let value = d - (2.0 / 3.0) * d.powf(1.5)
                    + self.params.seam_value() * k
                    + self.params.gamma * ((4.0 + k) * level - k);
                Ok(QuadValue { value, error: 0.0 })
            }
        }
    }

    /// `inv(ℓ)·∫₀^s ω(σ)/σ dσ`, finite even when the integral is not.
    fn inner_integral_weighted(&self, level: f64) -> f64 {
        let d = self.params.delta;
        let i = inv(level);
        (d - (2.0 / 3.0) * d.powf(1.5)) * i
            + (self.params.seam_value() - self.params.gamma) * (1.0 - 4.0 * i)
            + self.params.gamma * level
    }

    /// `s ∫_s^∞ ω(σ)/σ² dσ = ∫₀¹ ω(s/v) dv`.
    fn outer_integral(&self, p: Scaled, cfg: &QuadConfig) -> Result<QuadValue> {
        let rho = self.seam_ratio(p);
        let bp = if rho > 1.0 { vec![1.0 / rho] } else { vec![] };
        let tail = integrate(|v| self.diff(p, 1.0 / v), 0.0, 1.0, &bp, cfg)?;
        Ok(tail
            + QuadValue {
                value: self.omega_at(p),
                error: 0.0,
            })
    }

    /// `Ω_B(ξ)/A` as a function of `s`; `+∞` when out of range.
    fn velocity_scaled(&self, p: Scaled, cfg: &QuadConfig) -> Result<QuadValue> {
        Ok(self.inner_integral(p, cfg)? + self.outer_integral(p, cfg)?)
    }

    /// `Ω_B(ξ)`.
    pub fn velocity_modulus(&self, xi: f64, cfg: &QuadConfig) -> Result<QuadValue> {
        require_positive(xi)?;
        Ok(self.velocity_scaled(self.point(xi), cfg)? * self.params.a)
    }

    /// `ξ Ω_B(ξ) ω_B'(ξ) = A·W(s)·sω'(s)`.
    fn transport_scaled(&self, p: Scaled, cfg: &QuadConfig) -> Result<QuadValue> {
        let a = self.params.a;
        match p {
            Scaled::Lin(_) => Ok(self.velocity_scaled(p, cfg)? * (a * self.s_omega_prime(p))),
            Scaled::Log { level } => {
                let gi = self.params.gamma * inv(level);
                let inner = self.params.gamma * self.inner_integral_weighted(level);
                let outer = self.outer_integral(p, cfg)? * gi;
                Ok(QuadValue {
                    value: inner + outer.value,
                    error: outer.error,
                } * a)
            }
        }
    }

    /// `ξ M_B(ξ)` as a function of `s`.
    fn dissipation_scaled(&self, p: Scaled, cfg: &QuadConfig) -> Result<QuadValue> {
        let rho = self.seam_ratio(p);
        let w = self.omega_at(p);
        let near = integrate(
            |u| self.sym2(p, 2.0 * u) / (u * u),
            0.0,
            0.5,
            &[0.5 * (rho - 1.0), 0.5 * (1.0 - rho)],
            cfg,
        )?;
        let mid = integrate(
            |u| (self.diff(p, 2.0 * u + 1.0) - self.diff(p, 2.0 * u - 1.0) - 2.0 * w) / (u * u),
            0.5,
            1.0,
            &[0.5 * (rho - 1.0), 0.5 * (rho + 1.0)],
            cfg,
        )?;
        // u ∈ [1, ∞) with v = 1/u; the constant part integrates to −2ω(s)
        let far = integrate(
            |v| self.diff(p, 2.0 / v + 1.0) - self.diff(p, 2.0 / v - 1.0),
            0.0,
            1.0,
            &[2.0 / (rho - 1.0), 2.0 / (rho + 1.0)],
            cfg,
        )?;
        let total = near + mid + far
            + QuadValue {
                value: -2.0 * w,
                error: 0.0,
            };
        Ok(total * (1.0 / PI))
    }

    /// `M_B(ξ)`.
    pub fn dissipation_bound(&self, xi: f64, cfg: &QuadConfig) -> Result<QuadValue> {
        require_positive(xi)?;
        Ok(self.dissipation_scaled(self.point(xi), cfg)? * (1.0 / xi))
    }

    /// `F_B(ξ)`; the seam belongs to the first branch.
    pub fn force_bound(&self, xi: f64, f: &SupNorms) -> f64 {
        match self.point(xi) {
            Scaled::Lin(_) => xi * f.gradient,
            Scaled::Log { .. } => 2.0 * f.value,
        }
    }

    /// `ξ F_B(ξ)`.
    fn force_scaled(&self, p: Scaled, xi: f64, f: &SupNorms) -> f64 {
        match p {
            Scaled::Lin(_) => xi * xi * f.gradient,
            Scaled::Log { .. } => 2.0 * xi * f.value,
        }
    }

    /// All terms of `Ω_Bω_B' + F_B + M_B` at one separation.
    pub fn evaluate(&self, at: Separation, f: &SupNorms, cfg: &QuadConfig) -> Result<ModulusSample> {
        let p = at.point;
        let xi = at.xi;
        let transport = self.transport_scaled(p, cfg)?;
        let dissipation = self.dissipation_scaled(p, cfg)?;
        let force = self.force_scaled(p, xi, f);
        let scaled_lhs = transport.value + dissipation.value + force;
        let velocity = self.velocity_scaled(p, cfg)? * self.params.a;
        Ok(ModulusSample {
            xi,
            point: p,
            omega_b: self.omega_at(p),
            velocity: velocity.value,
            dissipation: dissipation.value / xi,
            force: match p {
                Scaled::Lin(_) => xi * f.gradient,
                Scaled::Log { .. } => 2.0 * f.value,
            },
            lhs: scaled_lhs / xi,
            scaled_lhs,
            error: transport.error + dissipation.error,
        })
    }
}

fn require_positive(xi: f64) -> Result<()> {
    if xi.is_finite() && xi > 0.0 {
        Ok(())
    } else {
        Err(SqgError::Domain(format!("separation must be positive, got {xi}")))
    }
}

/// Sup norm and gradient sup norm of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupNorms {
    pub value: f64,
    pub gradient: f64,
}

impl SupNorms {
    pub fn new(value: f64, gradient: f64) -> Result<Self> {
        if !(value.is_finite() && gradient.is_finite() && value >= 0.0 && gradient >= 0.0) {
            return Err(SqgError::Domain(format!(
                "norms must be finite and nonnegative, got ({value}, {gradient})"
            )));
        }
        Ok(Self { value, gradient })
    }

    /// Grid maxima of `|θ|` and `|∇θ|`.
    pub fn of(theta: &SpectralField) -> Self {
        Self {
            value: norm(theta, Norm::Linf),
            gradient: norm(theta, Norm::LinfGrad),
        }
    }
}

/// A separation `ξ` together with its rescaled point. `xi` is zero when the
/// separation lies below the range of `f64` (only possible for huge `B`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub xi: f64,
    pub point: Scaled,
}

impl Separation {
    pub fn from_xi(m: &Modulus, xi: f64) -> Self {
        Self {
            xi,
            point: m.point(xi),
        }
    }

    pub fn from_point(m: &Modulus, point: Scaled) -> Self {
        Self {
            xi: m.xi_of(point),
            point,
        }
    }
}

/// Separations covering `(0, d]`: the first branch log-spaced in `s`, both
/// sides of the seam, the stretch of the second branch below `10⁻¹² d`
/// uniformly in level, and log-spaced `ξ` up to `d`.
pub fn xi_grid(m: &Modulus, count: usize) -> Vec<Separation> {
    let count = count.max(8);
    let delta = m.params.delta;
    let mut out = Vec::with_capacity(count + 2);
    let s_top = match m.point(DIAMETER) {
        Scaled::Lin(s) => s,
        Scaled::Log { .. } => delta,
    };
    let n_lin = count / 4;
    let s_lo = 1e-4 * delta.min(s_top);
    for i in 0..n_lin {
        let t = i as f64 / n_lin as f64;
        let s = s_lo * (s_top / s_lo).powf(t);
        out.push(Separation::from_point(m, Scaled::Lin(s)));
    }
    if matches!(m.point(DIAMETER), Scaled::Lin(_)) {
        out.push(Separation::from_xi(m, DIAMETER));
        return out;
    }
    out.push(Separation::from_point(m, Scaled::Lin(delta * (1.0 - 1e-6))));
    let just_above = Scaled::Log {
        level: (0.25 * 1e-6f64.ln_1p()).ln_1p(),
    };
    out.push(Separation::from_point(m, just_above));

    let seam = m.seam();
    let xi_lo = (seam * (1.0 + 1e-6)).max(1e-12 * DIAMETER);
    let mut n_log = count - n_lin;
    if let Scaled::Log { level: top } = m.point(xi_lo) {
        let bottom = match just_above {
            Scaled::Log { level } => level,
            Scaled::Lin(_) => 0.0,
        };
        if xi_lo > seam * (1.0 + 1e-6) && top > bottom {
            let n_mid = n_log / 3;
            for i in 1..=n_mid {
                let level = bottom + (top - bottom) * i as f64 / (n_mid + 1) as f64;
                out.push(Separation::from_point(m, Scaled::Log { level }));
            }
            n_log -= n_mid;
        }
    }
    for i in 0..n_log {
        let t = i as f64 / (n_log - 1) as f64;
        let xi = if i + 1 == n_log {
            DIAMETER
        } else {
            xi_lo * (DIAMETER / xi_lo).powf(t)
        };
        out.push(Separation::from_xi(m, xi));
    }
    out
}

/// One row of the verification table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusSample {
    pub xi: f64,
    pub point: Scaled,
    pub omega_b: f64,
    /// `Ω_B(ξ)`; `+∞` when out of range.
    pub velocity: f64,
    /// `M_B(ξ)`.
    pub dissipation: f64,
    /// `F_B(ξ)`.
    pub force: f64,
    /// `Ω_Bω_B' + F_B + M_B`.
    pub lhs: f64,
    /// `ξ·lhs`, finite for every representable point.
    pub scaled_lhs: f64,
    /// Quadrature error bound on `scaled_lhs`.
    pub error: f64,
}

/// Outcome of [`verify_inequality`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub samples: Vec<ModulusSample>,
    pub max_lhs: f64,
    /// Largest `(ξ·lhs + error)/|ξ·lhs|` over the grid; negative when every
    /// sample is negative beyond its quadrature error.
    pub worst_relative_margin: f64,
    pub quadrature_error: f64,
    /// Every `M_B` sample is negative.
    pub dissipation_negative: bool,
    /// Largest small-separation bracket over first-branch samples.
    pub small_regime_bracket: f64,
    pub regime_coefficient: f64,
    pub pass: bool,
}

/// Evaluate the key inequality on `grid`; `pass` requires every sample to be
/// negative by more than its quadrature error.
pub fn verify_inequality(
    m: &Modulus,
    f: &SupNorms,
    grid: &[Separation],
    cfg: &QuadConfig,
) -> Result<VerificationReport> {
    if grid.is_empty() {
        return Err(SqgError::Domain("empty separation grid".into()));
    }
    if let Some(bad) = grid.iter().find(|s| !(s.xi <= DIAMETER && s.xi >= 0.0)) {
        return Err(SqgError::Domain(format!("separation {} outside (0, d]", bad.xi)));
    }
    let samples = grid
        .par_iter()
        .map(|&at| m.evaluate(at, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let max_lhs = samples.iter().map(|s| s.lhs).fold(f64::NEG_INFINITY, f64::max);
    let worst_relative_margin = samples
        .iter()
        .map(|s| (s.scaled_lhs + s.error) / s.scaled_lhs.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let quadrature_error = samples.iter().map(|s| s.error).fold(0.0, f64::max);
    let dissipation_negative = samples.iter().all(|s| s.dissipation < 0.0);
    let small_regime_bracket = samples
        .iter()
        .filter_map(|s| match s.point {
            Scaled::Lin(s) => Some(m.params.small_regime_bracket(s)),
            Scaled::Log { .. } => None,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = samples.iter().all(|s| s.scaled_lhs + s.error < 0.0);
    Ok(VerificationReport {
        samples,
        max_lhs,
        worst_relative_margin,
        quadrature_error,
        dissipation_negative,
        small_regime_bracket,
        regime_coefficient: m.params.regime_coefficient(),
        pass,
    })
}

/// Pair sampling for [`empirical_modulus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampling {
    /// Every grid offset with length at most this many cells.
    pub radius_cells: usize,
    /// Random pairs at arbitrary separation.
    pub long_pairs: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            radius_cells: 8,
            long_pairs: 100_000,
            seed: 0x6d6f64,
        }
    }
}

/// Largest `|Θ(x) − Θ(y)| / ω_B(|x − y|)` over the sampled pairs, with `|x − y|`
/// the shortest periodic distance. A value below one means `ω_B` is a strict
/// modulus on the sample.
pub fn empirical_modulus(field: &PhysicalField, m: &Modulus, sampling: &PairSampling) -> f64 {
    let grid = field.grid();
    let n = grid.n();
    let dx = grid.dx();
    let v = field.values();
    let r = sampling.radius_cells.min(n / 2 - 1) as i64;
    let mut offsets = Vec::new();
    for o2 in 0..=r {
        for o1 in -r..=r {
            if (o2 > 0 || o1 > 0) && o1 * o1 + o2 * o2 <= r * r {
                offsets.push((o1, o2));
            }
        }
    }
    let ni = n as i64;
    let short = offsets
        .par_iter()
        .map(|&(o1, o2)| {
            let w = m.omega_b(dx * ((o1 * o1 + o2 * o2) as f64).sqrt());
            let mut worst = 0.0f64;
            for i2 in 0..n {
                let j2 = ((i2 as i64 + o2).rem_euclid(ni)) as usize;
                for i1 in 0..n {
                    let j1 = ((i1 as i64 + o1).rem_euclid(ni)) as usize;
                    worst = worst.max((v[i2 * n + i1] - v[j2 * n + j1]).abs());
                }
            }
            worst / w
        })
        .reduce(|| 0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let wrap = |d: i64| {
        let d = d.rem_euclid(ni);
        d.min(ni - d) as f64
    };
    let mut long = 0.0f64;
    for _ in 0..sampling.long_pairs {
        let a = rng.gen_range(0..v.len());
        let b = rng.gen_range(0..v.len());
        if a == b {
            continue;
        }
        let d1 = wrap((a % n) as i64 - (b % n) as i64);
        let d2 = wrap((a / n) as i64 - (b / n) as i64);
        let xi = dx * (d1 * d1 + d2 * d2).sqrt();
        long = long.max((v[a] - v[b]).abs() / m.omega_b(xi));
    }
    short.max(long)
}

/// Result of [`choose_b`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleChoice {
    pub modulus: Modulus,
    /// Levels required by the gradient/sup condition, `AB² ≥ ‖∇f‖` and
    /// `ω_B(d)/d ≥ 4π‖f‖` respectively (`−∞` when vacuous).
    pub required_levels: [f64; 3],
    /// Empirical modulus ratio of the initial datum at the chosen `B`.
    pub initial_ratio: f64,
    /// Index `j` of the chosen point on the search grid.
    pub grid_index: usize,
}

/// Search controls for [`choose_b`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSearch {
    /// Initial ratio must not exceed `1 − margin`.
    pub margin: f64,
    /// Largest search-grid index tried.
    pub max_index: usize,
    /// Lower floor for `B`; must exceed `δ`.
    pub b_floor: f64,
    pub sampling: PairSampling,
}

impl Default for ScaleSearch {
    fn default() -> Self {
        Self {
            margin: 1e-2,
            max_index: 1 << 16,
            b_floor: 1.0,
            sampling: PairSampling::default(),
        }
    }
}

/// Level required by `B ≥ C‖∇Θ₀‖ exp(exp(C‖Θ₀‖))`.
pub fn gradient_condition_level(params: &ModulusParams, theta0: &SupNorms) -> f64 {
    let c = params.c_big;
    if theta0.gradient == 0.0 {
        return f64::NEG_INFINITY;
    }
    // ℓ = ln(1 + ¼(e^E + r)) with E = C‖Θ₀‖, r = ln(C‖∇Θ₀‖/δ)
    let e = c * theta0.value;
    let r = (c * theta0.gradient / params.delta).ln();
    if e < LEVEL_EXP_LIMIT {
        (0.25 * (e.exp() + r)).ln_1p()
    } else {
        e - LN_4 + ((4.0 + r) * (-e).exp()).ln_1p()
    }
}

fn level_of_ln_b(params: &ModulusParams, ln_b: f64) -> f64 {
    let x = 0.25 * (ln_b - params.delta.ln());
    if x <= -1.0 {
        f64::NEG_INFINITY
    } else {
        x.ln_1p()
    }
}

/// Level required by `AB² ≥ ‖∇f‖`.
pub fn force_gradient_level(params: &ModulusParams, f: &SupNorms) -> f64 {
    if f.gradient == 0.0 {
        return f64::NEG_INFINITY;
    }
    level_of_ln_b(params, 0.5 * (f.gradient / params.a).ln())
}

/// Level required by `ω_B(d)/d ≥ 4π‖f‖`. `ω(Bd)` is increasing in `B`, so the
/// condition inverts in closed form on the second branch and by bisection on
/// the first.
pub fn force_level(params: &ModulusParams, f: &SupNorms) -> f64 {
    let target = 4.0 * PI * f.value * DIAMETER;
    if target <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let c0 = params.seam_value();
    if target <= c0 {
        let (mut lo, mut hi) = (0.0, params.delta);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - mid.powf(1.5) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return level_of_ln_b(params, (hi / DIAMETER).ln());
    }
    // level of s = Bd is (target − c0)/γ; a relative nudge keeps the
    // predicate true after rounding
    let ld = (target - c0) / params.gamma * (1.0 + 1e-13) + 1e-13;
    ln_exp_plus(ld, -0.25 * DIAMETER.ln())
}

/// The three scale predicates, re-evaluated directly on `m`.
pub fn scale_conditions(m: &Modulus, theta0: &SupNorms, f: &SupNorms) -> [bool; 3] {
    let p = m.params;
    let c1 = m.level >= gradient_condition_level(&p, theta0);
    let c2 = p.a.ln() + 2.0 * m.ln_b() >= f.gradient.ln();
    let c3 = m.omega_b(DIAMETER) / DIAMETER >= 4.0 * PI * f.value;
    [c1, c2, c3]
}

/// `softplus(x) = ln(1 + eˣ)`.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Level of the search-grid point `j`: `ln(B_j/δ) = 2^{j/4} ln(B₀/δ)`.
/// `B` is super-exponential in the data, so the grid is geometric in `ln B`
/// rather than in `B`; plain doubling of `B` would not move `ω_B` at all.
fn grid_level(start: f64, j: usize) -> f64 {
    // ln(¼ ln(B₀/δ)) = ln(expm1(β₀))
    let base = if start > 30.0 {
        start + (-(-start).exp()).ln_1p()
    } else {
        start.exp_m1().ln()
    };
    softplus(base + 0.25 * LN_2 * j as f64)
}

/// Smallest `B` on a grid geometric in `ln B`, starting from `B₀`, that meets
/// the three scale conditions and gives `theta0` a strict modulus with margin.
/// `B₀` is the largest of the three condition thresholds and `b_floor`; the
/// first condition is read as a lower bound. Every condition is monotone in
/// `B`, so the grid is searched by galloping and bisection.
pub fn choose_b(
    theta0: &SpectralField,
    f: &SupNorms,
    params: &ModulusParams,
    search: &ScaleSearch,
) -> Result<ScaleChoice> {
    params.validate()?;
    if !(search.b_floor > params.delta && search.b_floor.is_finite()) {
        return Err(SqgError::Config(format!(
            "B floor {} must exceed δ = {}",
            search.b_floor, params.delta
        )));
    }
    let norms = SupNorms::of(theta0);
    let required_levels = [
        gradient_condition_level(params, &norms),
        force_gradient_level(params, f),
        force_level(params, f),
    ];
    let floor = level_of_ln_b(params, search.b_floor.ln());
    let start = required_levels.iter().copied().fold(floor, f64::max);
    let field = crate::spectral::inverse(theta0)?;
    let ratio_at = |j: usize| -> Result<(Modulus, f64)> {
        let m = Modulus::from_level(*params, grid_level(start, j))?;
        Ok((m, empirical_modulus(&field, &m, &search.sampling)))
    };
    let ok = |r: f64| r <= 1.0 - search.margin;

    let (m0, r0) = ratio_at(0)?;
    if ok(r0) {
        return Ok(ScaleChoice {
            modulus: m0,
            required_levels,
            initial_ratio: r0,
            grid_index: 0,
        });
    }
    let mut lo = 0;
    let mut hi = 1;
    let mut found = loop {
        if hi > search.max_index {
            return Err(SqgError::Selection(format!(
                "initial ratio still above {} at grid index {} (level {:.6})",
                1.0 - search.margin,
                search.max_index,
                grid_level(start, search.max_index)
            )));
        }
        let (m, r) = ratio_at(hi)?;
        if ok(r) {
            break (m, r);
        }
        lo = hi;
        hi *= 2;
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (m, r) = ratio_at(mid)?;
        if ok(r) {
            hi = mid;
            found = (m, r);
        } else {
            lo = mid;
        }
    }
    Ok(ScaleChoice {
        modulus: found.0,
        required_levels,
        initial_ratio: found.1,
        grid_index: hi,
    })
}
