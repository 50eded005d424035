//! Flat `section.key = value` configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key must be known;
//! unknown keys, malformed values and invalid combinations are config errors
//! (exit code 2). `--set` overrides are applied after the file, in order.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use spdelab_core::drift::{mollify_drift, HolderDrift, PolynomialReaction, ScalarHolder};
use spdelab_core::noise::NoisePathSpec;
use spdelab_core::semigroup::{Model, ScalarMap, TestFunctional};
use spdelab_core::solver::SolverConfig;
use spdelab_core::spectral::{Boundary, Field, GridSpec, SpectralOperator};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// `(key, default)`; the default is also the documentation of the type.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "simulate"),
    ("grid.n_points", "128"),
    ("grid.n_modes", "64"),
    ("grid.boundary", "dirichlet"),
    ("solver.dt", "1e-4"),
    ("solver.T", "1"),
    ("solver.blow_up_threshold", "1e6"),
    ("solver.record_stride", "100"),
    ("reaction.kind", "cubic"),
    ("reaction.m", "1"),
    ("reaction.alpha", "1"),
    ("reaction.coefficients", "0,0,0"),
    ("reaction.rho", "0"),
    ("drift.variant", "none"),
    ("drift.b", "power_sign"),
    ("drift.alpha", "0.5"),
    ("drift.value", "0"),
    ("drift.xi0", "0.5"),
    ("drift.g", "sine"),
    ("drift.mollify_m", "0"),
    ("drift.quadrature_samples", "32"),
    ("drift.seed", "7"),
    ("noise.seed", "42"),
    ("noise.levels", "4"),
    ("noise.paths", "1"),
    ("uniqueness.route", "both"),
    ("initial.kind", "zero"),
    ("initial.value", "0"),
    ("initial.mode", "1"),
    ("estimator.op", "pt"),
    ("estimator.functional", "mode"),
    ("estimator.k", "1"),
    ("estimator.xi", "0.5"),
    ("estimator.scale", "1"),
    ("estimator.n", "10000"),
    ("estimator.t", "0.1"),
    ("estimator.times", "0.002,0.005,0.01,0.02"),
    ("estimator.direction_mode", "1"),
    ("estimator.lambda", "1"),
    ("estimator.tol", "1e-3"),
    ("estimator.phi_bound", "0"),
    ("mollification.ms", "4,8,16,32"),
    ("verify.n", "2000"),
    ("verify.profile", "quick"),
    ("kernels.times", "0.01,0.05,0.1,0.5,1"),
    ("output.dir", "out"),
    ("output.format", "csv"),
    ("output.record_wall_time", "false"),
    ("workers", "1"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `KEY=VALUE` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: spec.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| {
            KEYS.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, d)| *d)
                .unwrap_or_else(|| panic!("unregistered key {key}"))
        })
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        let v = self.get(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.parse_as(key, "a number")
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse_as(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse_as(key, "an unsigned integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.parse_as(key, "true or false")
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.get(key);
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a comma-separated list of numbers",
            })
    }

    pub fn list_usize(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let v = self.get(key);
        v.split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a comma-separated list of integers",
            })
    }

    /// Every key with its effective value, one `key=value` per line. The
    /// output directory and worker count are left out: they must not change
    /// any emitted byte.
    pub fn canonical(&self) -> String {
        KEYS.iter()
            .filter(|(k, _)| *k != "output.dir" && *k != "workers")
            .map(|(k, _)| format!("{k}={}\n", self.get(k)))
            .collect()
    }

    /// Short digest of the effective parameters, excluding output plumbing.
    pub fn digest(&self) -> String {
        let text: String = KEYS
            .iter()
            .filter(|(k, _)| !k.starts_with("output.") && *k != "workers")
            .map(|(k, _)| format!("{k}={}\n", self.get(k)))
            .collect();
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Uniqueness,
    Estimate,
    Verify,
    Kernels,
}

impl std::str::FromStr for Experiment {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "simulate" => Experiment::Simulate,
            "uniqueness" => Experiment::Uniqueness,
            "estimate" => Experiment::Estimate,
            "verify" => Experiment::Verify,
            "kernels" => Experiment::Kernels,
            other => {
                return Err(ConfigError::Invalid(format!("unknown experiment `{other}`")))
            }
        })
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Uniqueness => "uniqueness",
            Experiment::Estimate => "estimate",
            Experiment::Verify => "verify",
            Experiment::Kernels => "kernels",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UniquenessRoute {
    Refinement,
    Mollification,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorOp {
    Pt,
    Derivative,
    Resolvent,
    Vectorial,
    Smoothing,
}

#[derive(Clone, Debug)]
pub struct EstimatorParams {
    pub op: EstimatorOp,
    pub functional: TestFunctional,
    pub n: usize,
    pub t: f64,
    pub times: Vec<f64>,
    pub direction_mode: usize,
    pub lambda: f64,
    pub tol: f64,
    pub phi_bound: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OutputParams {
    pub dir: PathBuf,
    pub format: OutputFormat,
    pub record_wall_time: bool,
}

/// Validated configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub experiment: Experiment,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub reaction: PolynomialReaction,
    /// Unmollified drift; see [`ExperimentConfig::drift`].
    pub base_drift: Option<HolderDrift>,
    pub mollify_m: usize,
    pub quadrature_samples: usize,
    pub drift_seed: u64,
    pub noise: NoisePathSpec,
    pub noise_levels: u32,
    pub noise_paths: usize,
    pub route: UniquenessRoute,
    pub x0: Field,
    pub estimator: EstimatorParams,
    pub mollification_ms: Vec<usize>,
    pub verify_n: usize,
    pub verify_full: bool,
    pub kernel_times: Vec<f64>,
    pub output: OutputParams,
    pub workers: usize,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn parse_scalar(raw: &RawConfig) -> Result<ScalarHolder, ConfigError> {
    let alpha = raw.f64("drift.alpha")?;
    let b = match raw.get("drift.b") {
        "clamped_sine" => ScalarHolder::ClampedSine,
        "power_sign" => ScalarHolder::PowerSign { alpha },
        "dist_to_integers" => ScalarHolder::DistToIntegers { alpha },
        "constant" => ScalarHolder::Constant {
            value: raw.f64("drift.value")?,
        },
        other => return Err(invalid(format!("unknown drift.b `{other}`"))),
    };
    b.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(b)
}

fn parse_g(raw: &RawConfig, grid: &GridSpec) -> Result<Field, ConfigError> {
    let pi = std::f64::consts::PI;
    let boundary = grid.boundary;
    let g = match raw.get("drift.g") {
        "one" => Field::constant(grid.n_nodes(), 1.0),
        "sine" => Field::from_fn(grid, |s| (pi * s).sin()),
        "linear" => Field::from_fn(grid, |s| 1.0 - s),
        other => return Err(invalid(format!("unknown drift.g `{other}`"))),
    };
    if boundary == Boundary::Dirichlet && raw.get("drift.g") != "sine" {
        log::warn!("drift.g does not vanish at the boundary; B leaves E for Dirichlet data");
    }
    Ok(g)
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let experiment: Experiment = raw.get("experiment").parse()?;
        let boundary = match raw.get("grid.boundary") {
            "dirichlet" => Boundary::Dirichlet,
            "neumann" => Boundary::Neumann,
            other => return Err(invalid(format!("unknown boundary `{other}`"))),
        };
        let grid = GridSpec::new(raw.usize("grid.n_points")?, boundary, raw.usize("grid.n_modes")?)
            .map_err(|e| invalid(e.to_string()))?;
        let solver = SolverConfig {
            blow_up_threshold: raw.f64("solver.blow_up_threshold")?,
            record_stride: raw.usize("solver.record_stride")?,
            ..SolverConfig::new(raw.f64("solver.dt")?, raw.f64("solver.T")?)
        };
        solver.validate().map_err(|e| invalid(e.to_string()))?;

        let mut reaction = match raw.get("reaction.kind") {
            "cubic" => PolynomialReaction::cubic(),
            "zero" => PolynomialReaction::zero(),
            "linear" => PolynomialReaction::linear(raw.f64("reaction.rho")?),
            "polynomial" => PolynomialReaction::constant_coefficients(
                raw.usize("reaction.m")?,
                raw.f64("reaction.alpha")?,
                &raw.list_f64("reaction.coefficients")?,
            )
            .map_err(|e| invalid(e.to_string()))?,
            other => return Err(invalid(format!("unknown reaction.kind `{other}`"))),
        };
        reaction.blow_up_threshold = solver.blow_up_threshold;

        let base_drift = match raw.get("drift.variant") {
            "none" => None,
            "point_eval" => {
                let xi0 = raw.f64("drift.xi0")?;
                if !(0.0..=1.0).contains(&xi0) {
                    return Err(invalid(format!("drift.xi0 = {xi0} outside [0, 1]")));
                }
                Some(HolderDrift::PointEval {
                    b: parse_scalar(&raw)?,
                    xi0,
                    g: parse_g(&raw, &grid)?,
                })
            }
            "running_max" => Some(HolderDrift::RunningMax { b: parse_scalar(&raw)? }),
            "running_max_abs" => Some(HolderDrift::RunningMaxAbs { b: parse_scalar(&raw)? }),
            "pointwise" => Some(HolderDrift::Pointwise { b: parse_scalar(&raw)? }),
            other => return Err(invalid(format!("unknown drift.variant `{other}`"))),
        };
        let mollify_m = raw.usize("drift.mollify_m")?;
        if mollify_m > grid.n_modes {
            return Err(invalid(format!(
                "drift.mollify_m = {mollify_m} exceeds grid.n_modes = {}",
                grid.n_modes
            )));
        }

        let noise_levels = raw.usize("noise.levels")? as u32;
        if noise_levels < 2 || noise_levels > 12 {
            return Err(invalid("noise.levels must lie in 2..=12"));
        }
        let noise = NoisePathSpec::new(
            raw.u64("noise.seed")?,
            solver.dt,
            solver.n_steps().max(1),
            grid.n_modes,
        );
        let noise_paths = raw.usize("noise.paths")?.max(1);
        let route = match raw.get("uniqueness.route") {
            "refinement" => UniquenessRoute::Refinement,
            "mollification" => UniquenessRoute::Mollification,
            "both" => UniquenessRoute::Both,
            other => return Err(invalid(format!("unknown uniqueness.route `{other}`"))),
        };

        let x0 = match raw.get("initial.kind") {
            "zero" => Field::zeros(grid.n_nodes()),
            "constant" => {
                let v = raw.f64("initial.value")?;
                if boundary == Boundary::Dirichlet && v != 0.0 {
                    log::warn!("constant initial data is projected onto the sine basis");
                }
                Field::constant(grid.n_nodes(), v)
            }
            "mode" => {
                let k = raw.usize("initial.mode")?;
                let op = SpectralOperator::new(&grid).map_err(|e| invalid(e.to_string()))?;
                let pos = op
                    .position_of(k)
                    .ok_or_else(|| invalid(format!("initial.mode {k} is not retained")))?;
                op.eigenfunction(pos).scale(raw.f64("initial.value")?)
            }
            other => return Err(invalid(format!("unknown initial.kind `{other}`"))),
        };

        let k = raw.usize("estimator.k")?;
        let functional = match raw.get("estimator.functional") {
            "mode" => TestFunctional::ModeCoefficient { k },
            "sup" => TestFunctional::SupNorm,
            "point" => TestFunctional::PointValue {
                xi: raw.f64("estimator.xi")?,
            },
            "tanh" => TestFunctional::BoundedComposite {
                map: ScalarMap::Tanh {
                    scale: raw.f64("estimator.scale")?,
                },
                k,
            },
            "sign" => TestFunctional::BoundedComposite {
                map: ScalarMap::Sign,
                k,
            },
            other => return Err(invalid(format!("unknown estimator.functional `{other}`"))),
        };
        let op = match raw.get("estimator.op") {
            "pt" => EstimatorOp::Pt,
            "derivative" => EstimatorOp::Derivative,
            "resolvent" => EstimatorOp::Resolvent,
            "vectorial" => EstimatorOp::Vectorial,
            "smoothing" => EstimatorOp::Smoothing,
            other => return Err(invalid(format!("unknown estimator.op `{other}`"))),
        };
        let phi_bound = raw.f64("estimator.phi_bound")?;
        let estimator = EstimatorParams {
            op,
            functional,
            n: raw.usize("estimator.n")?,
            t: raw.f64("estimator.t")?,
            times: raw.list_f64("estimator.times")?,
            direction_mode: raw.usize("estimator.direction_mode")?,
            lambda: raw.f64("estimator.lambda")?,
            tol: raw.f64("estimator.tol")?,
            phi_bound: (phi_bound > 0.0).then_some(phi_bound),
        };
        if estimator.n < 2 {
            return Err(invalid("estimator.n must be at least 2"));
        }

        let format = match raw.get("output.format") {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            "both" => OutputFormat::Both,
            other => return Err(invalid(format!("unknown output.format `{other}`"))),
        };
        let verify_full = match raw.get("verify.profile") {
            "quick" => false,
            "full" => true,
            other => return Err(invalid(format!("unknown verify.profile `{other}`"))),
        };
        let workers = raw.usize("workers")?;
        if workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        Ok(ExperimentConfig {
            experiment,
            grid,
            solver,
            reaction,
            base_drift,
            mollify_m,
            quadrature_samples: raw.usize("drift.quadrature_samples")?,
            drift_seed: raw.u64("drift.seed")?,
            noise,
            noise_levels,
            noise_paths,
            route,
            x0,
            estimator,
            mollification_ms: raw.list_usize("mollification.ms")?,
            verify_n: raw.usize("verify.n")?.max(2),
            verify_full,
            kernel_times: raw.list_f64("kernels.times")?,
            output: OutputParams {
                dir: PathBuf::from(raw.get("output.dir")),
                format,
                record_wall_time: raw.bool("output.record_wall_time")?,
            },
            workers,
            raw,
        })
    }

    pub fn operator(&self) -> SpectralOperator {
        SpectralOperator::new(&self.grid).expect("validated grid")
    }

    /// The drift in use: `B`, or `B_m` when `drift.mollify_m > 0`.
    pub fn drift(&self, op: &SpectralOperator) -> Result<Option<HolderDrift>, ConfigError> {
        match (&self.base_drift, self.mollify_m) {
            (Some(b), m) if m > 0 => Ok(Some(
                mollify_drift(b, op, m, self.quadrature_samples, self.drift_seed)
                    .map_err(|e| invalid(e.to_string()))?,
            )),
            (b, _) => Ok(b.clone()),
        }
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let op = self.operator();
        let drift = self.drift(&op)?;
        let mut m = Model::new(op, self.reaction.clone(), self.solver.dt, self.noise.seed)
            .with_drift(drift)
            .with_workers(self.workers);
        m.blow_up_threshold = self.solver.blow_up_threshold;
        Ok(m)
    }

    pub fn digest(&self) -> String {
        self.raw.digest()
    }
}
