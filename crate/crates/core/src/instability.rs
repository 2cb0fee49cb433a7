//! Growth of small perturbations along the unstable eigenfunction.
//!
//! Each run evolves `θ(0) = ε Re φ` under the full perturbation dynamics
//! `∂ₜθ = Lθ + N(θ)` while co-evolving the linear flow `e^{Lt}θ(0)` with the
//! same steps, so that the nonlinear remainder `θ(t) − e^{Lt}θ(0)` is
//! available at every observation.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{EvolutionState, Mode, Observation, QgSystem, SteadyState, StepperConfig};
use crate::error::{Result, SqgError};
use crate::linear::{LinearOperator, SpectrumResult};
use crate::spectral::{norm, Norm, SpectralField};

/// Experiment parameters. `None` selects the documented default.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Strictly decreasing, all in `(0, 1]`.
    pub epsilons: Vec<f64>,
    /// Envelope radius `R > ‖φ‖`; default `1.5‖φ‖`.
    pub radius: Option<f64>,
    /// Linear-regime cap on `‖θ‖/‖φ‖`; default `0.1 R`.
    pub rho_lin: Option<f64>,
    /// Escape norm; default `0.2‖θ₀‖_{L²}`.
    pub threshold: Option<f64>,
    /// Final time; default `3 λ⁻¹ ln(1/ε_min)`.
    pub t_max: Option<f64>,
    /// Start of the growth-fit window.
    pub t_skip: f64,
    /// Runs stop once `‖θ‖ ≥ stop_factor · threshold`.
    pub stop_factor: f64,
    pub gamma_interp: f64,
    pub stepper: StepperConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5],
            radius: None,
            rho_lin: None,
            threshold: None,
            t_max: None,
            t_skip: 2.0,
            stop_factor: 1.25,
            gamma_interp: 0.5,
            stepper: StepperConfig {
                observe_every: 0.05,
                ..StepperConfig::default()
            },
        }
    }
}

/// One observation of a perturbation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSample {
    /// `l2`/`hhalf`/`energy_flux` refer to `θ`; `linf`/`linf_grad` to
    /// `θ₀ + θ`.
    pub obs: Observation,
    /// `‖θ(t) − e^{Lt}θ(0)‖_{L²}`.
    pub duhamel_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRecord {
    pub epsilon: f64,
    pub samples: Vec<GrowthSample>,
    pub lambda_hat: Option<f64>,
    /// Why the growth fit was not available, if it was not.
    pub fit_note: Option<String>,
    pub escape_time: Option<f64>,
    /// First observed violation of `‖θ(t)‖ ≤ εR e^{λt}`.
    pub envelope_time: Option<f64>,
    pub max_grad_linf: f64,
}

impl GrowthRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.obs.t).collect()
    }

    pub fn l2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.obs.l2).collect()
    }
}

/// How [`escape_time`] interpolates between the bracketing samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    Linear,
    /// Linear in `ln‖θ‖`, exact for exponential growth.
    #[default]
    LogLinear,
}

/// First time the series reaches `threshold`, interpolated between samples.
pub fn escape_time(ts: &[f64], ys: &[f64], threshold: f64, interp: Interp) -> Option<f64> {
    if !(threshold > 0.0) || ts.is_empty() {
        return None;
    }
    if ys[0] >= threshold {
        return Some(ts[0]);
    }
    for i in 1..ts.len() {
        if ys[i] >= threshold {
            let (t0, t1, y0, y1) = (ts[i - 1], ts[i], ys[i - 1], ys[i]);
            let w = match interp {
                Interp::LogLinear if y0 > 0.0 => (threshold.ln() - y0.ln()) / (y1.ln() - y0.ln()),
                _ => (threshold - y0) / (y1 - y0),
            };
            return Some(t0 + w * (t1 - t0));
        }
    }
    None
}

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(SqgError::Fit(format!("need at least two points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(SqgError::Fit("non-finite fit input".into()));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(SqgError::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: n,
    })
}

/// Growth rate from positive samples `(t, y)`: the slope of `ln y`, or of
/// the log of the local maxima when `oscillatory`.
pub fn fit_growth_rate(ts: &[f64], ys: &[f64], oscillatory: bool) -> Result<f64> {
    if ts.len() < 10 {
        return Err(SqgError::Fit(format!(
            "growth window holds {} samples, need at least 10",
            ts.len()
        )));
    }
    if ys.iter().any(|y| !(*y > 0.0)) {
        return Err(SqgError::Fit("growth window contains nonpositive norms".into()));
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    if !oscillatory {
        return Ok(fit_line(ts, &logs)?.slope);
    }
    let (pt, py) = envelope_peaks(ts, &logs);
    if pt.len() < 3 {
        return Err(SqgError::Fit(format!(
            "envelope fit found {} peaks, need at least 3",
            pt.len()
        )));
    }
    Ok(fit_line(&pt, &py)?.slope)
}

/// Interior local maxima of `ys`, refined by a parabola through the three
/// neighbouring samples.
fn envelope_peaks(ts: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pt = Vec::new();
    let mut py = Vec::new();
    for i in 1..ys.len().saturating_sub(1) {
        if ys[i] > ys[i - 1] && ys[i] >= ys[i + 1] {
            let (t0, t1, t2) = (ts[i - 1], ts[i], ts[i + 1]);
            let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
            // Newton form of the interpolating parabola.
            let d1 = (y1 - y0) / (t1 - t0);
            let d2 = (y2 - y1) / (t2 - t1);
            let c = (d2 - d1) / (t2 - t0);
            if c < 0.0 {
                let b = d1 - c * (t0 + t1);
                let tp = -b / (2.0 * c);
                let yp = y0 + d1 * (tp - t0) + c * (tp - t0) * (tp - t1);
                pt.push(tp);
                py.push(yp);
            } else {
                pt.push(t1);
                py.push(y1);
            }
        }
    }
    (pt, py)
}

/// Defaults resolved against a concrete spectrum and steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub lambda: f64,
    pub oscillatory: bool,
    pub phi_norm: f64,
    pub radius: f64,
    pub rho_lin: f64,
    pub threshold: f64,
    pub t_max: f64,
}

/// The perturbation experiment about one steady state.
#[derive(Debug, Clone)]
pub struct Experiment {
    system: QgSystem,
    linear: LinearOperator,
    spectrum: SpectrumResult,
    initial: SpectralField,
    cfg: ExperimentConfig,
    resolved: Resolved,
}

impl Experiment {
    pub fn new(steady: Arc<SteadyState>, spectrum: SpectrumResult, cfg: ExperimentConfig) -> Result<Self> {
        cfg.stepper.validate()?;
        if cfg.epsilons.is_empty() {
            return Err(SqgError::Config("at least one ε is required".into()));
        }
        if cfg.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(SqgError::Config("every ε must lie in (0, 1]".into()));
        }
        if cfg.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SqgError::Config("ε values must be strictly decreasing".into()));
        }
        if !(cfg.stop_factor >= 1.0) {
            return Err(SqgError::Config("stop_factor must be at least 1".into()));
        }
        if !(cfg.t_skip >= 0.0) {
            return Err(SqgError::Config("t_skip must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&cfg.gamma_interp) {
            return Err(SqgError::Config("gamma_interp must lie in [0, 1]".into()));
        }
        if spectrum.eigenfunction.grid() != steady.grid() {
            return Err(SqgError::Config("spectrum and steady state live on different grids".into()));
        }
        let lambda = spectrum.lambda();
        let phi_norm = norm(&spectrum.eigenfunction, Norm::L2);
        let radius = cfg.radius.unwrap_or(1.5 * phi_norm);
        if !(radius > phi_norm) {
            return Err(SqgError::Config(format!(
                "R = {radius} must exceed ‖φ‖ = {phi_norm}"
            )));
        }
        let rho_lin = cfg.rho_lin.unwrap_or(0.1 * radius);
        let threshold = cfg
            .threshold
            .unwrap_or(0.2 * norm(steady.theta0(), Norm::L2));
        if !(threshold > 0.0 && rho_lin > 0.0) {
            return Err(SqgError::Config("threshold and rho_lin must be positive".into()));
        }
        let eps_min = *cfg.epsilons.last().expect("nonempty");
        let t_max = match cfg.t_max {
            Some(t) => t,
            None if lambda > 0.0 => 3.0 / lambda * (1.0 / eps_min).ln().max(1.0),
            None => 10.0,
        };
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(SqgError::Config(format!("t_max must be positive, got {t_max}")));
        }
        let mu = spectrum.rightmost;
        let oscillatory = mu.im.abs() > 1e-8 * mu.norm().max(1.0);
        let initial = spectrum.real_eigenfunction();
        Ok(Self {
            system: QgSystem::new(steady.clone()),
            linear: LinearOperator::new(steady),
            spectrum,
            initial,
            cfg,
            resolved: Resolved {
                lambda,
                oscillatory,
                phi_norm,
                radius,
                rho_lin,
                threshold,
                t_max,
            },
        })
    }

    pub fn resolved(&self) -> &Resolved {
        &self.resolved
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn spectrum(&self) -> &SpectrumResult {
        &self.spectrum
    }

    pub fn system(&self) -> &QgSystem {
        &self.system
    }

    /// False when `λ ≤ 0`: there is nothing to escape from.
    pub fn is_meaningful(&self) -> bool {
        self.resolved.lambda > 0.0
    }

    /// [`run_perturbation_with`](Self::run_perturbation_with) without a hook.
    pub fn run_perturbation(&self, epsilon: f64) -> Result<GrowthRecord> {
        self.run_perturbation_with(epsilon, |_, _| {})
    }

    /// Evolve `θ(0) = ε Re φ` until escape (times `stop_factor`) or `t_max`.
    /// `hook` sees every sample together with the full field `θ₀ + θ`.
    pub fn run_perturbation_with(
        &self,
        epsilon: f64,
        mut hook: impl FnMut(&GrowthSample, &SpectralField),
    ) -> Result<GrowthRecord> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(SqgError::Domain(format!("ε must lie in [0, 1], got {epsilon}")));
        }
        let r = &self.resolved;
        let sc = &self.cfg.stepper;
        let theta0 = self.initial.scaled(epsilon);
        let mut state = EvolutionState::new(theta0.clone(), Mode::Perturbation)?;
        let mut lin = theta0.into_coeffs();
        let grid = self.system.grid();

        let mut samples = Vec::new();
        let mut guard = f64::INFINITY;
        let mut tick = 1u64;
        let stop_at = self.cfg.stop_factor * r.threshold;
        let tol = 1e-12 * r.t_max.max(1.0);
        loop {
            let obs = self.system.observe(&state)?;
            if samples.is_empty() {
                guard = sc.guard_factor * obs.linf_grad.max(1.0);
            } else if !(obs.linf_grad <= guard) {
                return Err(SqgError::BlowUp {
                    t: state.t,
                    reason: format!(
                        "‖∇Θ‖_L∞ = {:.6e} exceeds the guard {guard:.6e}",
                        obs.linf_grad
                    ),
                });
            }
            let lin_field = SpectralField::from_coeffs(grid, lin.clone())?;
            let sample = GrowthSample {
                obs,
                duhamel_residual: norm(&state.theta.sub(&lin_field)?, Norm::L2),
            };
            hook(&sample, &self.system.full_field(&state));
            samples.push(sample);
            if obs.l2 >= stop_at || state.t >= r.t_max - tol {
                break;
            }
            let next_obs = (tick as f64 * sc.observe_every).min(r.t_max);
            tick += 1;
            while state.t < next_obs - tol {
                let mut dt = self.system.cfl_dt(&state, sc);
                let hit = state.t + dt >= next_obs - tol;
                if hit {
                    dt = next_obs - state.t;
                }
                state = self.system.step(&state, dt)?;
                lin = self.linear.step_real(&lin, dt);
                if hit {
                    state.t = next_obs;
                }
            }
        }
        Ok(self.finish(epsilon, samples))
    }

    fn finish(&self, epsilon: f64, samples: Vec<GrowthSample>) -> GrowthRecord {
        let r = &self.resolved;
        let ts: Vec<f64> = samples.iter().map(|s| s.obs.t).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.obs.l2).collect();
        let cap = r.rho_lin * r.phi_norm;
        let (wt, wy): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .zip(&ys)
            .filter(|(t, y)| **t >= self.cfg.t_skip && **y <= cap)
            .map(|(t, y)| (*t, *y))
            .unzip();
        let (lambda_hat, fit_note) = if epsilon == 0.0 {
            (None, Some("ε = 0: nothing to fit".to_string()))
        } else {
            match check_window(&wt, r.lambda).and_then(|_| fit_growth_rate(&wt, &wy, r.oscillatory)) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        let envelope_time = ts
            .iter()
            .zip(&ys)
            .find(|(t, y)| **y > epsilon * r.radius * (r.lambda * **t).exp())
            .map(|(t, _)| *t);
        GrowthRecord {
            epsilon,
            lambda_hat,
            fit_note,
            escape_time: escape_time(&ts, &ys, r.threshold, Interp::LogLinear),
            envelope_time,
            max_grad_linf: samples.iter().fold(0.0, |m, s| m.max(s.obs.linf_grad)),
            samples,
        }
    }

    /// Run every ε (in parallel, at most `jobs` at a time) and regress the
    /// escape times on `ln(1/ε)`.
    pub fn epsilon_sweep(&self, jobs: Option<usize>) -> Result<SweepReport> {
        if !self.is_meaningful() {
            return self.summarize(Vec::new());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| SqgError::Config(format!("thread pool: {e}")))?;
        let records: Vec<GrowthRecord> = pool.install(|| {
            self.cfg
                .epsilons
                .par_iter()
                .map(|&e| self.run_perturbation(e))
                .collect::<Result<Vec<_>>>()
        })?;
        self.summarize(records)
    }

    /// Sweep report from runs made elsewhere (for instance with a hook),
    /// given in the configured ε order.
    pub fn summarize(&self, records: Vec<GrowthRecord>) -> Result<SweepReport> {
        if !self.is_meaningful() {
            return Ok(SweepReport {
                vacuous: true,
                records: Vec::new(),
                regression: None,
                non_escaping: Vec::new(),
                warnings: vec![format!(
                    "rightmost eigenvalue has Re μ = {:.6e} ≤ 0; the experiment is vacuous",
                    self.resolved.lambda
                )],
            });
        }
        let mut warnings = Vec::new();
        let eps = &self.cfg.epsilons;
        if records.iter().map(|r| r.epsilon).ne(eps.iter().copied()) {
            return Err(SqgError::Config("records do not match the configured ε list".into()));
        }
        if eps.len() < 4 {
            warnings.push(format!("only {} ε values; at least 4 are recommended", eps.len()));
        }
        let decades = (eps[0] / eps[eps.len() - 1]).log10();
        if decades < 2.0 - 1e-12 {
            warnings.push(format!("ε values span {decades:.2} decades; at least 2 are recommended"));
        }
        let non_escaping: Vec<f64> = records
            .iter()
            .filter(|r| r.escape_time.is_none())
            .map(|r| r.epsilon)
            .collect();
        for e in &non_escaping {
            warnings.push(format!("ε = {e:e} did not reach the threshold by t_max"));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter_map(|r| r.escape_time.map(|t| ((1.0 / r.epsilon).ln(), t)))
            .unzip();
        let regression = if xs.len() >= 2 {
            Some(fit_line(&xs, &ys)?)
        } else {
            warnings.push("fewer than two escaping runs; no regression".into());
            None
        };
        Ok(SweepReport {
            vacuous: false,
            records,
            regression,
            non_escaping,
            warnings,
        })
    }
}

fn check_window(ts: &[f64], lambda: f64) -> Result<()> {
    if ts.len() < 10 {
        return Err(SqgError::Fit(format!(
            "growth window holds {} samples, need at least 10",
            ts.len()
        )));
    }
    let span = ts[ts.len() - 1] - ts[0];
    if lambda > 0.0 && span < 1.0 / lambda {
        return Err(SqgError::Fit(format!(
            "growth window spans {span:.3}, need at least 1/λ = {:.3}",
            1.0 / lambda
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Set when `λ ≤ 0`; no runs are made.
    pub vacuous: bool,
    /// In the order of the configured ε list.
    pub records: Vec<GrowthRecord>,
    /// Escape time against `ln(1/ε)` over the escaping runs.
    pub regression: Option<LineFit>,
    pub non_escaping: Vec<f64>,
    pub warnings: Vec<String>,
}
