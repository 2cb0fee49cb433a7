//! Subcommands. Each one finishes every computation that can fail on input
//! before the output directory is touched.

use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use sqg_core::dynamics::{field_from_fn, make_steady, EvolutionState, Mode, Observation, QgSystem, SteadyState};
use sqg_core::instability::{Experiment, GrowthRecord};
use sqg_core::linear::{default_delta_shift, EigenMethod, LinearOperator, SpectrumResult};
use sqg_core::modulus::{
    choose_b, empirical_modulus, verify_inequality, xi_grid, PairSampling, Scaled, ScaleSearch, SupNorms,
};
use sqg_core::quadrature::QuadConfig;
use sqg_core::spectral::{forward, inverse, PhysicalField, SpectralField};
use sqg_core::SqgError;

use crate::config::{InitialKind, Method, RunConfig, SteadyKind};
use crate::io::{fmt_f64, read_sqgf, write_csv, write_sqgf};

/// How a command that ran to completion judged its result.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    /// A scientific gate failed; the message says which.
    Fail(String),
}

impl Verdict {
    fn gate(ok: bool, why: impl FnOnce() -> String) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail(why())
        }
    }
}

/// Files and summary text produced by a command, written in one go.
struct Output {
    dir: PathBuf,
    summary: String,
}

impl Output {
    fn create(cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        Ok(Self {
            dir: cfg.out_dir.clone(),
            summary: String::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.summary, "{key} = {value}");
    }

    fn finish(self, name: &str) -> Result<String> {
        let p = self.path(name);
        fs::write(&p, &self.summary).with_context(|| format!("writing {}", p.display()))?;
        Ok(self.summary)
    }
}

fn load_field(path: &Path, cfg: &RunConfig) -> Result<SpectralField> {
    let p = read_sqgf(path)?;
    if p.grid() != cfg.grid {
        return Err(SqgError::Config(format!(
            "{} holds an n = {} field but the grid is n = {}",
            path.display(),
            p.grid().n(),
            cfg.grid.n()
        ))
        .into());
    }
    let s = forward(&p)?;
    let mean = s.mean().norm();
    if mean > 1e-12 * s.max_abs_coeff().max(1e-300) {
        return Err(SqgError::Domain(format!("{} has nonzero mean {mean:.3e}", path.display())).into());
    }
    let mut s = s;
    s.remove_mean();
    Ok(s)
}

pub fn build_steady(cfg: &RunConfig) -> Result<SteadyState> {
    Ok(match &cfg.steady {
        SteadyKind::Shear { m, amplitude } => SteadyState::shear(cfg.grid, *m, *amplitude)?,
        SteadyKind::CustomFile(path) => make_steady(load_field(path, cfg)?)?,
    })
}

fn spectrum_of(cfg: &RunConfig, steady: &Arc<SteadyState>) -> Result<SpectrumResult> {
    let method = match cfg.spectrum.method {
        Method::Dense => EigenMethod::dense(),
        Method::Power => EigenMethod::SemigroupPower(cfg.spectrum.power),
    };
    Ok(LinearOperator::new(steady.clone()).rightmost_eigenpair(cfg.spectrum.k, &method)?)
}

fn physical(s: &SpectralField) -> Result<PhysicalField> {
    Ok(inverse(s)?)
}

const STEADY_GATE: f64 = 1e-10;
const RESIDUAL_GATE: f64 = 1e-8;

pub fn cmd_steady(cfg: &RunConfig) -> Result<Verdict> {
    let steady = build_steady(cfg)?;
    let (q1, q2) = steady.q0();
    let fields = [
        ("theta0.sqgf", physical(steady.theta0())?),
        ("f.sqgf", physical(steady.f())?),
        ("q0_1.sqgf", physical(q1)?),
        ("q0_2.sqgf", physical(q2)?),
    ];
    let residual = steady.residual();

    let mut out = Output::create(cfg)?;
    for (name, field) in &fields {
        write_sqgf(&out.path(name), field)?;
    }
    out.line("n", cfg.grid.n());
    out.line("residual", fmt_f64(residual));
    out.line("f_linf", fmt_f64(fields[1].1.max_abs()));
    out.line("bandwidth", steady.bandwidth());
    out.finish("steady.txt")?;
    Ok(Verdict::gate(residual < STEADY_GATE, || {
        format!("steady residual {residual:.3e} exceeds {STEADY_GATE:.0e}")
    }))
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Verdict> {
    let steady = Arc::new(build_steady(cfg)?);
    let spec = spectrum_of(cfg, &steady)?;
    let (re, im) = spec.eigenfunction.split_real_imag();
    let (phi_re, phi_im) = (physical(&re)?, physical(&im)?);

    let smoothing = match cfg.spectrum.smoothing_gamma {
        Some(gamma) => {
            let lambda = spec.lambda();
            let delta = cfg.delta_shift.unwrap_or_else(|| default_delta_shift(lambda, gamma));
            let op = LinearOperator::shifted(steady.clone(), lambda, delta, gamma)?
                .with_truncation(spec.truncation)?;
            let phi = spec.real_eigenfunction();
            let rows = (0..16)
                .map(|i| {
                    let t = 0.01 * 200f64.powf(i as f64 / 15.0);
                    Ok(vec![t, op.smoothing_probe(&phi, t, gamma)?])
                })
                .collect::<Result<Vec<_>>>()?;
            Some((gamma, delta, rows))
        }
        None => None,
    };

    let mut out = Output::create(cfg)?;
    let rows: Vec<Vec<f64>> = spec.eigenvalues.iter().map(|z| vec![z.re, z.im]).collect();
    write_csv(&out.path("spectrum.csv"), &["re", "im"], &rows)?;
    write_sqgf(&out.path("phi_re.sqgf"), &phi_re)?;
    write_sqgf(&out.path("phi_im.sqgf"), &phi_im)?;
    if let Some((gamma, delta, rows)) = &smoothing {
        write_csv(&out.path("smoothing.csv"), &["t", "ratio"], rows)?;
        out.line("smoothing_gamma", fmt_f64(*gamma));
        out.line("smoothing_delta", fmt_f64(*delta));
    }
    out.line("method", format!("{:?}", cfg.spectrum.method).to_lowercase());
    out.line("K", spec.truncation);
    out.line("mu_re", fmt_f64(spec.rightmost.re));
    out.line("mu_im", fmt_f64(spec.rightmost.im));
    out.line("lambda", fmt_f64(spec.lambda()));
    out.line("residual", fmt_f64(spec.residual));
    if let Some(it) = spec.iterations {
        out.line("iterations", it);
    }
    out.finish("summary.txt")?;
    Ok(Verdict::gate(spec.residual < RESIDUAL_GATE, || {
        format!("eigenpair residual {:.3e} exceeds {RESIDUAL_GATE:.0e}", spec.residual)
    }))
}

const SERIES_HEADER: [&str; 6] = ["t", "l2", "linf", "linf_grad", "hhalf", "energy_flux"];

fn series_row(o: &Observation) -> Vec<f64> {
    vec![o.t, o.l2, o.linf, o.linf_grad, o.hhalf, o.energy_flux]
}

pub fn cmd_evolve(cfg: &RunConfig) -> Result<Verdict> {
    let steady = Arc::new(build_steady(cfg)?);
    let theta = match &cfg.initial {
        InitialKind::Steady => steady.theta0().clone(),
        InitialKind::Mode { k1, k2, amplitude } => {
            let (k1, k2, a) = (*k1 as f64, *k2 as f64, *amplitude);
            field_from_fn(cfg.grid, |x1, x2| a * (k1 * x1 + k2 * x2).sin())?
        }
        InitialKind::File(path) => load_field(path, cfg)?,
    };
    let system = QgSystem::new(steady);
    let mut rows = Vec::new();
    let last = system.evolve(
        EvolutionState::new(theta, Mode::Full)?,
        cfg.t_end,
        &cfg.stepper,
        |_, o| {
            rows.push(series_row(o));
            ControlFlow::Continue(())
        },
    )?;
    let fin = physical(&last.theta)?;

    let mut out = Output::create(cfg)?;
    write_csv(&out.path("series.csv"), &SERIES_HEADER, &rows)?;
    write_sqgf(&out.path("final.sqgf"), &fin)?;
    out.line("t_end", fmt_f64(last.t));
    out.line("observations", rows.len());
    out.finish("evolve.txt")?;
    Ok(Verdict::Pass)
}

fn escape_norm(rec: &GrowthRecord) -> f64 {
    match rec.escape_time {
        Some(t) => rec
            .samples
            .iter()
            .find(|s| s.obs.t >= t)
            .map_or(f64::NAN, |s| s.obs.l2),
        None => f64::NAN,
    }
}

pub fn cmd_instability(cfg: &RunConfig, jobs: Option<usize>) -> Result<Verdict> {
    let steady = Arc::new(build_steady(cfg)?);
    let spec = spectrum_of(cfg, &steady)?;
    let lambda = spec.lambda();
    if lambda <= 0.0 {
        return Ok(Verdict::Fail(format!(
            "rightmost eigenvalue λ = {lambda:.6e} ≤ 0: the steady state is linearly stable and there is \
             nothing to sweep"
        )));
    }
    let experiment = Experiment::new(steady, spec, cfg.experiment.clone())?;
    let report = experiment.epsilon_sweep(jobs)?;
    let resolved = experiment.resolved();

    let mut out = Output::create(cfg)?;
    let mut header = SERIES_HEADER.to_vec();
    header.push("duhamel_residual");
    for (i, rec) in report.records.iter().enumerate() {
        let rows: Vec<Vec<f64>> = rec
            .samples
            .iter()
            .map(|s| {
                let mut r = series_row(&s.obs);
                r.push(s.duhamel_residual);
                r
            })
            .collect();
        write_csv(&out.path(&format!("series_{i:02}.csv")), &header, &rows)?;
    }
    let sweep: Vec<Vec<f64>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.epsilon,
                r.lambda_hat.unwrap_or(f64::NAN),
                r.escape_time.unwrap_or(f64::NAN),
                escape_norm(r),
                r.max_grad_linf,
            ]
        })
        .collect();
    write_csv(
        &out.path("sweep.csv"),
        &["epsilon", "lambda_hat", "escape_time", "escape_norm", "max_grad_linf"],
        &sweep,
    )?;

    out.line("lambda", fmt_f64(lambda));
    out.line("inverse_lambda", fmt_f64(1.0 / lambda));
    out.line("threshold", fmt_f64(resolved.threshold));
    out.line("t_max", fmt_f64(resolved.t_max));
    let verdict = match &report.regression {
        Some(fit) => {
            out.line("slope", fmt_f64(fit.slope));
            out.line("intercept", fmt_f64(fit.intercept));
            out.line("r_squared", fmt_f64(fit.r_squared));
            let rel = (fit.slope * lambda - 1.0).abs();
            Verdict::gate(rel < 0.1 && fit.r_squared > 0.99, || {
                format!(
                    "slope {:.5} vs 1/λ {:.5} (relative {rel:.3e}), R² {:.6}",
                    fit.slope,
                    1.0 / lambda,
                    fit.r_squared
                )
            })
        }
        None => Verdict::Pass,
    };
    for w in &report.warnings {
        out.line("warning", w);
        eprintln!("warning: {w}");
    }
    let verdict = if report.non_escaping.is_empty() {
        verdict
    } else {
        let eps: Vec<String> = report.non_escaping.iter().map(|e| format!("{e:e}")).collect();
        out.line("non_escaping", eps.join(","));
        Verdict::Fail(format!("runs did not escape before t_max: ε = {}", eps.join(", ")))
    };
    out.finish("regression.txt")?;
    Ok(verdict)
}

pub fn cmd_modulus(cfg: &RunConfig) -> Result<Verdict> {
    let ms = &cfg.modulus;
    let steady = Arc::new(build_steady(cfg)?);
    let f = SupNorms::of(steady.f());
    let sampling = PairSampling {
        seed: ms.seed,
        ..PairSampling::default()
    };
    let search = ScaleSearch {
        sampling,
        ..ScaleSearch::default()
    };

    // Θ(0) = θ₀ + ε Re φ, with the eigenpair only when it is needed.
    let experiment = if ms.epsilon > 0.0 || ms.trajectory {
        let spec = spectrum_of(cfg, &steady)?;
        Some(Experiment::new(steady.clone(), spec, cfg.experiment.clone())?)
    } else {
        None
    };
    let mut theta = steady.theta0().clone();
    if let (Some(e), true) = (&experiment, ms.epsilon > 0.0) {
        theta.axpy(ms.epsilon, &e.spectrum().real_eigenfunction())?;
    }
    let choice = choose_b(&theta, &f, &ms.params, &search)?;
    let m = choice.modulus;
    let checked = match ms.f_norm {
        Some(v) => SupNorms::new(v, f.gradient)?,
        None => f,
    };
    let quad = QuadConfig {
        abs_tol: 0.0,
        ..QuadConfig::default()
    };
    let report = verify_inequality(&m, &checked, &xi_grid(&m, ms.grid_points), &quad)?;

    let trajectory = match (&experiment, ms.trajectory) {
        (Some(e), true) => {
            let eps = if ms.epsilon > 0.0 { ms.epsilon } else { cfg.experiment.epsilons[0] };
            let mut rows = Vec::new();
            let mut failure = None;
            e.run_perturbation_with(eps, |s, full| match inverse(full) {
                Ok(p) => rows.push(vec![s.obs.t, empirical_modulus(&p, &m, &sampling)]),
                Err(err) => failure = Some(err),
            })?;
            if let Some(err) = failure {
                return Err(err.into());
            }
            Some(rows)
        }
        _ => None,
    };

    let mut out = Output::create(cfg)?;
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| vec![s.xi, s.omega_b, s.velocity, s.dissipation, s.force, s.lhs])
        .collect();
    write_csv(
        &out.path("modulus.csv"),
        &["xi", "omega_B", "Omega_B", "M_B", "F_B", "lhs"],
        &rows,
    )?;
    // ξ = s/B underflows once B is astronomically large; these columns stay
    // finite: branch 0 stores s = Bξ, branch 1 stores ln(1 + ln(s/δ)/4).
    let scaled: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| {
            let (branch, coord) = match s.point {
                Scaled::Lin(v) => (0.0, v),
                Scaled::Log { level } => (1.0, level),
            };
            vec![branch, coord, s.omega_b, s.scaled_lhs, s.error]
        })
        .collect();
    write_csv(
        &out.path("modulus_scaled.csv"),
        &["branch", "coordinate", "omega_B", "xi_lhs", "error"],
        &scaled,
    )?;
    out.line("ln_B", fmt_f64(m.ln_b()));
    out.line("B", fmt_f64(m.b()));
    out.line("level", fmt_f64(m.level()));
    out.line("initial_ratio", fmt_f64(choice.initial_ratio));
    out.line("max_lhs", fmt_f64(report.max_lhs));
    out.line("worst_relative_margin", fmt_f64(report.worst_relative_margin));
    out.line("quadrature_error", fmt_f64(report.quadrature_error));
    out.line("dissipation_negative", report.dissipation_negative);
    out.line("regime_coefficient", fmt_f64(report.regime_coefficient));
    out.line("small_regime_bracket", fmt_f64(report.small_regime_bracket));
    out.line("inequality_pass", report.pass);

    let mut failures = Vec::new();
    if !report.pass {
        failures.push(format!(
            "inequality violated (worst relative margin {:.3e})",
            report.worst_relative_margin
        ));
    }
    if !report.dissipation_negative {
        failures.push("dissipation bound not negative".to_string());
    }
    if report.regime_coefficient >= 0.0 {
        failures.push(format!(
            "Aγ + 1/(2π) − 1/π = {:.4} is not negative",
            report.regime_coefficient
        ));
    }
    if let Some(rows) = &trajectory {
        write_csv(&out.path("trajectory.csv"), &["t", "ratio"], rows)?;
        let worst = rows.iter().map(|r| r[1]).fold(0.0, f64::max);
        out.line("trajectory_max_ratio", fmt_f64(worst));
        if !(worst < 1.0) {
            failures.push(format!("empirical modulus ratio reached {worst:.4}"));
        }
    }
    out.line("pass", failures.is_empty());
    out.finish("modulus.txt")?;
    Ok(if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(failures.join("; "))
    })
}
