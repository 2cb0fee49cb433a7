//! Run configuration: flat INI sections, every key validated before any
//! computation or output happens.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ini::Ini;
use sqg_core::dynamics::StepperConfig;
use sqg_core::instability::ExperimentConfig;
use sqg_core::linear::PowerConfig;
use sqg_core::modulus::ModulusParams;
use sqg_core::spectral::GridSpec;
use thiserror::Error;

/// Configuration problems; the CLI maps these to exit code 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("duplicate key `{key}` in [{section}]")]
    DuplicateKey { section: String, key: String },
    #[error("[{section}] {key} = `{value}`: {reason}")]
    Value {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["n"]),
    ("steady", &["kind", "m", "amplitude", "file"]),
    ("initial", &["kind", "k1", "k2", "amplitude", "file"]),
    ("time", &["cfl", "dtMax", "tMax", "observeEvery", "guardFactor"]),
    ("spectrum", &["K", "method", "tauPow", "tol", "maxIter", "smoothingGamma"]),
    (
        "experiment",
        &["epsilons", "threshold", "R", "rhoLin", "tMax", "tSkip", "gammaInterp", "deltaShift"],
    ),
    (
        "modulus",
        &["deltaMod", "gammaMod", "A", "Cbig", "seed", "epsilon", "gridPoints", "fNorm", "trajectory"],
    ),
    ("io", &["outDir"]),
];

#[derive(Debug, Clone, PartialEq)]
pub enum SteadyKind {
    Shear { m: u32, amplitude: f64 },
    /// θ₀ read from an SQGF file.
    CustomFile(PathBuf),
}

/// Initial data for `evolve`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialKind {
    Steady,
    /// `amplitude · sin(k₁x₁ + k₂x₂)`.
    Mode { k1: i64, k2: i64, amplitude: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dense,
    Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSettings {
    pub k: usize,
    pub method: Method,
    pub power: PowerConfig,
    pub smoothing_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusSettings {
    pub params: ModulusParams,
    pub seed: u64,
    /// Size of the eigenfunction perturbation added to θ₀.
    pub epsilon: f64,
    pub grid_points: usize,
    /// Replaces `‖f‖∞` in the checked inequality (not in the choice of B).
    pub f_norm: Option<f64>,
    pub trajectory: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub steady: SteadyKind,
    pub initial: InitialKind,
    pub stepper: StepperConfig,
    pub t_end: f64,
    pub spectrum: SpectrumSettings,
    pub experiment: ExperimentConfig,
    pub delta_shift: Option<f64>,
    pub modulus: ModulusSettings,
    pub out_dir: PathBuf,
}

/// Raw `key = value` pairs, each consumed at most once.
struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let known: BTreeMap<&str, BTreeSet<&str>> =
            SCHEMA.iter().map(|(s, keys)| (*s, keys.iter().copied().collect())).collect();
        let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (section, props) in ini.iter() {
            let name = match section {
                Some(s) => s.to_string(),
                None if props.is_empty() => continue,
                None => return Err(ConfigError::Syntax("keys outside any section".into())),
            };
            let Some(keys) = known.get(name.as_str()) else {
                return Err(ConfigError::UnknownSection(name));
            };
            let entry = map.entry(name.clone()).or_default();
            for (k, v) in props.iter() {
                if !keys.contains(k) {
                    return Err(ConfigError::UnknownKey {
                        section: name,
                        key: k.to_string(),
                    });
                }
                if entry.insert(k.to_string(), v.trim().to_string()).is_some() {
                    return Err(ConfigError::DuplicateKey {
                        section: name,
                        key: k.to_string(),
                    });
                }
            }
        }
        Ok(Self { map })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.map.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(section, key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    section: section.into(),
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn real(&self, section: &str, key: &str, check: impl Fn(f64) -> bool, what: &str) -> Result<Option<f64>> {
        match self.get::<f64>(section, key)? {
            Some(x) if !(x.is_finite() && check(x)) => Err(ConfigError::Value {
                section: section.into(),
                key: key.into(),
                value: x.to_string(),
                reason: format!("must be {what}"),
            }),
            other => Ok(other),
        }
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| ConfigError::Value {
                    section: section.into(),
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn path(&self, section: &str, key: &str, base: &Path) -> Option<PathBuf> {
        self.raw(section, key).map(|p| base.join(p))
    }
}

fn value_err(section: &str, key: &str, value: impl ToString, reason: &str) -> ConfigError {
    ConfigError::Value {
        section: section.into(),
        key: key.into(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parse and validate; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let s = Sections::parse(text)?;

        let n = s.get::<usize>("grid", "n")?.unwrap_or(64);
        let grid = GridSpec::new(n).map_err(|e| value_err("grid", "n", n, &e.to_string()))?;

        let steady = match s.raw("steady", "kind").unwrap_or("shear") {
            "shear" => SteadyKind::Shear {
                m: s.get::<u32>("steady", "m")?.unwrap_or(2),
                amplitude: s.real("steady", "amplitude", |_| true, "finite")?.unwrap_or(8.0),
            },
            "custom-file" => SteadyKind::CustomFile(
                s.path("steady", "file", base)
                    .ok_or_else(|| ConfigError::Invalid("steady kind custom-file needs `file`".into()))?,
            ),
            other => return Err(value_err("steady", "kind", other, "expected shear or custom-file")),
        };
        if let SteadyKind::Shear { m, .. } = steady {
            if m == 0 || m as i64 > grid.dealias_cutoff() {
                return Err(value_err("steady", "m", m, "must lie in 1..=n/3"));
            }
        }

        let initial = match s.raw("initial", "kind").unwrap_or("steady") {
            "steady" => InitialKind::Steady,
            "mode" => {
                let k1 = s.get::<i64>("initial", "k1")?.unwrap_or(1);
                let k2 = s.get::<i64>("initial", "k2")?.unwrap_or(0);
                let cut = grid.dealias_cutoff();
                if (k1, k2) == (0, 0) || k1.abs() > cut || k2.abs() > cut {
                    return Err(ConfigError::Invalid(format!(
                        "initial mode ({k1}, {k2}) must be nonzero and resolved (|k_i| <= {cut})"
                    )));
                }
                InitialKind::Mode {
                    k1,
                    k2,
                    amplitude: s.real("initial", "amplitude", |_| true, "finite")?.unwrap_or(1.0),
                }
            }
            "file" => InitialKind::File(
                s.path("initial", "file", base)
                    .ok_or_else(|| ConfigError::Invalid("initial kind file needs `file`".into()))?,
            ),
            other => return Err(value_err("initial", "kind", other, "expected steady, mode or file")),
        };

        let d = StepperConfig::default();
        let stepper = StepperConfig {
            cfl: s.real("time", "cfl", positive, "positive")?.unwrap_or(d.cfl),
            dt_max: s.real("time", "dtMax", positive, "positive")?.unwrap_or(d.dt_max),
            observe_every: s.real("time", "observeEvery", positive, "positive")?.unwrap_or(d.observe_every),
            guard_factor: s.real("time", "guardFactor", |x| x > 1.0, "greater than 1")?.unwrap_or(d.guard_factor),
        };
        stepper.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t_end = s.real("time", "tMax", positive, "positive")?.unwrap_or(1.0);

        let k = s
            .get::<usize>("spectrum", "K")?
            .unwrap_or(12.min(grid.dealias_cutoff() as usize));
        if k == 0 || k as i64 > grid.dealias_cutoff() {
            return Err(value_err("spectrum", "K", k, &format!("must lie in 1..={}", grid.dealias_cutoff())));
        }
        let method = match s.raw("spectrum", "method").unwrap_or("dense") {
            "dense" => Method::Dense,
            "power" => Method::Power,
            other => return Err(value_err("spectrum", "method", other, "expected dense or power")),
        };
        let pd = PowerConfig::default();
        let mut power = PowerConfig {
            tau: s.real("spectrum", "tauPow", positive, "positive")?.unwrap_or(pd.tau),
            tol: s.real("spectrum", "tol", positive, "positive")?.unwrap_or(pd.tol),
            max_iter: s.get::<usize>("spectrum", "maxIter")?.unwrap_or(pd.max_iter),
            ..pd
        };
        power.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let smoothing_gamma = s.real("spectrum", "smoothingGamma", |g| g > 0.0 && g < 1.0, "in (0, 1)")?;

        let ed = ExperimentConfig::default();
        let epsilons = s.list("experiment", "epsilons")?.unwrap_or(ed.epsilons.clone());
        if epsilons.is_empty()
            || epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0))
            || epsilons.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(value_err(
                "experiment",
                "epsilons",
                format!("{epsilons:?}"),
                "must be strictly decreasing values in (0, 1]",
            ));
        }
        let experiment = ExperimentConfig {
            epsilons,
            radius: s.real("experiment", "R", positive, "positive")?,
            rho_lin: s.real("experiment", "rhoLin", positive, "positive")?,
            threshold: s.real("experiment", "threshold", positive, "positive")?,
            t_max: s.real("experiment", "tMax", positive, "positive")?,
            t_skip: s.real("experiment", "tSkip", |x| x >= 0.0, "non-negative")?.unwrap_or(ed.t_skip),
            gamma_interp: s
                .real("experiment", "gammaInterp", |g| g > 0.0 && g < 1.0, "in (0, 1)")?
                .unwrap_or(ed.gamma_interp),
            stepper: StepperConfig {
                observe_every: s
                    .real("time", "observeEvery", positive, "positive")?
                    .unwrap_or(ed.stepper.observe_every),
                ..stepper
            },
            ..ed
        };
        let delta_shift = s.real("experiment", "deltaShift", positive, "positive")?;

        let md = ModulusParams::default();
        let params = ModulusParams {
            delta: s.real("modulus", "deltaMod", |_| true, "finite")?.unwrap_or(md.delta),
            gamma: s.real("modulus", "gammaMod", |_| true, "finite")?.unwrap_or(md.gamma),
            a: s.real("modulus", "A", |_| true, "finite")?.unwrap_or(md.a),
            c_big: s.real("modulus", "Cbig", |_| true, "finite")?.unwrap_or(md.c_big),
        };
        params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let grid_points = s.get::<usize>("modulus", "gridPoints")?.unwrap_or(200);
        if grid_points < 8 {
            return Err(value_err("modulus", "gridPoints", grid_points, "must be at least 8"));
        }
        let seed = s.get::<u64>("modulus", "seed")?.unwrap_or(0x6d6f64);
        power.seed = seed;
        let modulus = ModulusSettings {
            params,
            seed,
            epsilon: s
                .real("modulus", "epsilon", |e| (0.0..=1.0).contains(&e), "in [0, 1]")?
                .unwrap_or(1e-3),
            grid_points,
            f_norm: s.real("modulus", "fNorm", |x| x >= 0.0, "non-negative")?,
            trajectory: s.get::<bool>("modulus", "trajectory")?.unwrap_or(false),
        };

        let out_dir = s.path("io", "outDir", base).unwrap_or_else(|| base.join("out"));

        Ok(Self {
            grid,
            steady,
            initial,
            stepper,
            t_end,
            spectrum: SpectrumSettings {
                k,
                method,
                power,
                smoothing_gamma,
            },
            experiment,
            delta_shift,
            modulus,
            out_dir,
        })
    }

    /// Apply command-line overrides; the seed feeds every sampler.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(o) = out {
            self.out_dir = o;
        }
        if let Some(seed) = seed {
            self.modulus.seed = seed;
            self.spectrum.power.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("/tmp"))
    }

    #[test]
    fn empty_config_takes_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.grid.n(), 64);
        assert_eq!(c.steady, SteadyKind::Shear { m: 2, amplitude: 8.0 });
        assert_eq!(c.spectrum.k, 12);
        assert_eq!(c.modulus.params, ModulusParams::default());
        assert_eq!(c.out_dir, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn comments_and_lists() {
        let c = parse(
            "# run\n[grid]\nn = 32\n[experiment]\nepsilons = 1e-2, 1e-3\n[spectrum]\nK = 8\nmethod = power\n",
        );
        let c = c.unwrap();
        assert_eq!(c.experiment.epsilons, vec![1e-2, 1e-3]);
        assert_eq!(c.spectrum.method, Method::Power);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(matches!(parse("[grid]\nsize = 3\n"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse("[mesh]\nn = 3\n"), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(parse("n = 3\n"), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn preconditions_are_checked() {
        assert!(parse("[grid]\nn = 63\n").is_err());
        assert!(parse("[grid]\nn = 32\n[spectrum]\nK = 11\n").is_err());
        assert!(parse("[grid]\nn = 32\n[spectrum]\nK = 10\n").is_ok());
        assert!(parse("[experiment]\nepsilons = 1e-3, 1e-2\n").is_err());
        assert!(parse("[modulus]\ngammaMod = 0.2\n").is_err());
        assert!(parse("[modulus]\ngammaMod = 0.2\ndeltaMod = 0.3\n").is_ok());
        assert!(parse("[time]\ncfl = -1\n").is_err());
        assert!(parse("[steady]\nkind = vortex\n").is_err());
    }

    #[test]
    fn overrides_replace_seed_and_output() {
        let c = parse("")
            .unwrap()
            .with_overrides(Some(PathBuf::from("/x")), Some(7));
        assert_eq!(c.out_dir, PathBuf::from("/x"));
        assert_eq!((c.modulus.seed, c.spectrum.power.seed), (7, 7));
    }
}
