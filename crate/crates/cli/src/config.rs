//! Run configuration: TOML file with flat `[mixture]`, `[grid]`, `[stepper]`,
//! `[initial]` and `[output]` sections layered over a named scenario preset.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use msnt_core::{FaceAverage, Grid, LocalState, MixtureParams, StepConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SCENARIOS: [&str; 4] = ["uniform-rest", "two-species-mixing", "robin-cooling", "closed-box-relaxation"];

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Malformed document or unknown key; `line` is 1-based.
    Parse {
        line: Option<usize>,
        message: String,
    },
    Validation(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line: Some(line), message } => write!(f, "line {line}: {message}"),
            ConfigError::Parse { line: None, message } => write!(f, "{message}"),
            ConfigError::Validation(message) => write!(f, "{message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Spatial profile sampled at cell centers; positions are absolute coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `left` for `x < at`, `right` beyond, blended by `tanh((x - at)/width)` when
    /// `width > 0`.
    Step {
        left: f64,
        right: f64,
        at: f64,
        #[serde(default)]
        width: f64,
    },
    /// `base + amplitude exp(-(x - center)^2 / (2 width^2))`.
    Gaussian {
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

impl Profile {
    pub fn sample(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Step { left, right, at, width } => {
                let s = if width > 0.0 {
                    0.5 * (1.0 + ((x - at) / width).tanh())
                } else if x < at {
                    0.0
                } else {
                    1.0
                };
                left + (right - left) * s
            }
            Profile::Gaussian { base, amplitude, center, width } => {
                base + amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp()
            }
        }
    }

    fn check(&self, what: &str) -> Result<(), ConfigError> {
        let ok = match *self {
            Profile::Constant { value } => value.is_finite(),
            Profile::Step { left, right, at, width } => {
                left.is_finite() && right.is_finite() && at.is_finite() && width.is_finite() && width >= 0.0
            }
            Profile::Gaussian { base, amplitude, center, width } => {
                base.is_finite() && amplitude.is_finite() && center.is_finite() && width.is_finite() && width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Validation(format!("{what}: profile parameters must be finite with nonnegative width")))
        }
    }
}

/// Friction coefficients: one value for every pair, a full matrix, or named pairs
/// `b12 = ...` (missing pairs default to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Friction {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
    Pairs(BTreeMap<String, f64>),
}

impl Friction {
    fn matrix(&self, n: usize) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            Friction::Uniform(b) => Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { *b })),
            Friction::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(ConfigError::Validation(format!(
                        "mixture.friction must be a {n}x{n} matrix for {n} species"
                    )));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            Friction::Pairs(pairs) => {
                let mut b = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
                for (key, value) in pairs {
                    let (i, j) = parse_pair(key, n)?;
                    b[(i, j)] = *value;
                    b[(j, i)] = *value;
                }
                Ok(b)
            }
        }
    }
}

fn parse_pair(key: &str, n: usize) -> Result<(usize, usize), ConfigError> {
    let bad = || {
        ConfigError::Validation(format!(
            "mixture.friction: key `{key}` is not of the form b<i><j> with 1 <= i != j <= {n}"
        ))
    };
    let digits = key.strip_prefix('b').ok_or_else(bad)?.trim_start_matches('_');
    let (a, b) = match digits.split_once('_') {
        Some((a, b)) => (a, b),
        None if digits.len() == 2 => digits.split_at(1),
        None => return Err(bad()),
    };
    let i: usize = a.parse().map_err(|_| bad())?;
    let j: usize = b.parse().map_err(|_| bad())?;
    if i == 0 || j == 0 || i > n || j > n || i == j {
        return Err(bad());
    }
    Ok((i - 1, j - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub molar_masses: Vec<f64>,
    pub friction: Friction,
    pub heat_capacity: f64,
    pub kappa0: f64,
    pub kappa2: f64,
    pub lambda: f64,
    pub theta0: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub cells: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Arithmetic,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub tau: f64,
    pub t_final: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub damping: f64,
    pub max_halvings: usize,
    pub face_average: Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub scenario: String,
    pub density: Vec<Profile>,
    pub temperature: Profile,
    /// Relative amplitude of the random ripple applied with `--seed`.
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub diagnostics: String,
    pub snapshot: String,
    pub error: String,
    /// Write a diagnostics row every `every` steps; the final step is always written.
    pub every: usize,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mixture: MixtureSection,
    pub grid: GridSection,
    pub stepper: StepperSection,
    pub initial: InitialSection,
    pub output: OutputSection,
}

// The file layer: every key optional so that presets can fill the gaps.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    mixture: FileMixture,
    #[serde(default)]
    grid: FileGrid,
    #[serde(default)]
    stepper: FileStepper,
    #[serde(default)]
    initial: FileInitial,
    #[serde(default)]
    output: FileOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMixture {
    molar_masses: Option<Vec<f64>>,
    friction: Option<Friction>,
    heat_capacity: Option<f64>,
    kappa0: Option<f64>,
    kappa2: Option<f64>,
    lambda: Option<f64>,
    theta0: Option<f64>,
    epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGrid {
    cells: Option<usize>,
    length: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStepper {
    tau: Option<f64>,
    t_final: Option<f64>,
    newton_tol: Option<f64>,
    newton_max: Option<usize>,
    damping: Option<f64>,
    max_halvings: Option<usize>,
    face_average: Option<Average>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileInitial {
    scenario: Option<String>,
    density: Option<Vec<Profile>>,
    temperature: Option<Profile>,
    perturbation: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOutput {
    directory: Option<PathBuf>,
    diagnostics: Option<String>,
    snapshot: Option<String>,
    error: Option<String>,
    every: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $file:expr, [$($field:ident),*]) => {
        $( if let Some(v) = $file.$field { $base.$field = v; } )*
    };
}

impl RunConfig {
    /// Built-in defaults: two species at rest, used when no scenario is named.
    pub fn defaults() -> Self {
        Self {
            mixture: MixtureSection {
                molar_masses: vec![1.0, 2.0],
                friction: Friction::Uniform(1.0),
                heat_capacity: 1.0,
                kappa0: 1.0,
                kappa2: 1.0,
                lambda: 0.0,
                theta0: 1.0,
                epsilon: 0.0,
            },
            grid: GridSection { cells: 20, length: 1.0 },
            stepper: StepperSection {
                tau: 0.01,
                t_final: 1.0,
                newton_tol: 1e-10,
                newton_max: 30,
                damping: 0.5,
                max_halvings: 8,
                face_average: Average::Arithmetic,
            },
            initial: InitialSection {
                scenario: "default".into(),
                density: vec![Profile::Constant { value: 0.5 }, Profile::Constant { value: 1.0 }],
                temperature: Profile::Constant { value: 1.0 },
                perturbation: 0.01,
            },
            output: OutputSection {
                directory: PathBuf::from("msnt-out"),
                diagnostics: "diagnostics.csv".into(),
                snapshot: "snapshot.csv".into(),
                error: "error.json".into(),
                every: 1,
            },
        }
    }

    /// Named scenario preset, or `None` for an unknown name.
    pub fn preset(name: &str) -> Option<Self> {
        let mut c = Self::defaults();
        c.initial.scenario = name.to_string();
        match name {
            "default" => {}
            "uniform-rest" => {
                c.stepper.tau = 0.01;
                c.stepper.t_final = 1.0;
            }
            "two-species-mixing" => {
                c.mixture.molar_masses = vec![1.0, 2.0, 4.0];
                c.mixture.friction =
                    Friction::Matrix(vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.5], vec![2.0, 0.5, 0.0]]);
                c.mixture.heat_capacity = 1.5;
                c.grid.cells = 100;
                c.stepper.tau = 1e-3;
                c.stepper.t_final = 1.0;
                c.initial.density = vec![
                    Profile::Step { left: 0.8, right: 0.2, at: 0.5, width: 0.05 },
                    Profile::Step { left: 0.2, right: 0.8, at: 0.5, width: 0.05 },
                    Profile::Constant { value: 0.5 },
                ];
                c.initial.temperature = Profile::Gaussian { base: 1.0, amplitude: 0.5, center: 0.5, width: 0.1 };
            }
            "robin-cooling" => {
                c.mixture.molar_masses = vec![1.0, 2.0];
                c.mixture.lambda = 1.0;
                c.mixture.theta0 = 1.0;
                c.grid.cells = 1;
                c.stepper.tau = 0.05;
                c.stepper.t_final = 5.0;
                c.initial.density = vec![Profile::Constant { value: 1.0 }, Profile::Constant { value: 1.0 }];
                c.initial.temperature = Profile::Constant { value: 2.0 };
            }
            "closed-box-relaxation" => {
                c.mixture.molar_masses = vec![1.0, 2.0, 4.0];
                c.mixture.heat_capacity = 1.5;
                c.grid.cells = 40;
                c.stepper.tau = 0.05;
                c.stepper.t_final = 5.0;
                c.initial.density = vec![
                    Profile::Gaussian { base: 0.5, amplitude: 0.3, center: 0.3, width: 0.1 },
                    Profile::Gaussian { base: 0.5, amplitude: -0.3, center: 0.3, width: 0.1 },
                    Profile::Constant { value: 1.0 },
                ];
                c.initial.temperature = Profile::Gaussian { base: 1.0, amplitude: 0.4, center: 0.7, width: 0.1 };
            }
            _ => return None,
        }
        Some(c)
    }

    pub fn species(&self) -> usize {
        self.mixture.molar_masses.len()
    }

    pub fn steps(&self) -> usize {
        (self.stepper.t_final / self.stepper.tau).round() as usize
    }

    pub fn mixture_params(&self) -> Result<MixtureParams, ConfigError> {
        let m = &self.mixture;
        let n = m.molar_masses.len();
        let friction = m.friction.matrix(n)?;
        let params = MixtureParams {
            molar_masses: m.molar_masses.clone(),
            friction,
            heat_capacity: m.heat_capacity,
            kappa0: m.kappa0,
            kappa2: m.kappa2,
            lambda: m.lambda,
            theta0: m.theta0,
            epsilon: m.epsilon,
        };
        params.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(params)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.cells, self.grid.length).map_err(|e| ConfigError::Validation(e.to_string()))
    }

    pub fn step_config(&self) -> Result<StepConfig, ConfigError> {
        let s = &self.stepper;
        let cfg = StepConfig {
            tau: s.tau,
            newton_tol: s.newton_tol,
            newton_max: s.newton_max,
            damping: s.damping,
            max_halvings: s.max_halvings,
            face_average: match s.face_average {
                Average::Arithmetic => FaceAverage::Arithmetic,
                Average::Harmonic => FaceAverage::Harmonic,
            },
        };
        cfg.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        if !(s.t_final.is_finite() && s.t_final >= 0.0) {
            return Err(ConfigError::Validation(format!("stepper.t_final = {} must be nonnegative", s.t_final)));
        }
        Ok(cfg)
    }

    /// Initial cell states sampled at cell centers, with an optional seeded ripple.
    pub fn initial_states(&self, seed: Option<u64>) -> Result<Vec<LocalState>, ConfigError> {
        let grid = self.grid()?;
        let n = self.species();
        if self.initial.density.len() != n {
            return Err(ConfigError::Validation(format!(
                "initial.density lists {} profiles for {n} species",
                self.initial.density.len()
            )));
        }
        for (i, prof) in self.initial.density.iter().enumerate() {
            prof.check(&format!("initial.density[{}]", i + 1))?;
        }
        self.initial.temperature.check("initial.temperature")?;
        let amp = self.initial.perturbation;
        if seed.is_some() && !(amp.is_finite() && (0.0..1.0).contains(&amp)) {
            return Err(ConfigError::Validation(format!("initial.perturbation = {amp} must lie in [0, 1)")));
        }
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let mut ripple = || -> f64 {
            match rng.as_mut() {
                Some(r) => 1.0 + amp * r.random_range(-1.0..1.0),
                None => 1.0,
            }
        };
        let mut states = Vec::with_capacity(grid.cells());
        for (k, &x) in grid.cell_centers().iter().enumerate() {
            let rho: Vec<f64> = self.initial.density.iter().map(|p| p.sample(x) * ripple()).collect();
            let theta = self.initial.temperature.sample(x) * ripple();
            if let Some(i) = rho.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(ConfigError::Validation(format!(
                    "assumption A2 violated: initial density rho_{} = {} at x = {x} (cell {k}) must be nonnegative",
                    i + 1,
                    rho[i]
                )));
            }
            let total: f64 = rho.iter().sum();
            if total.is_nan() || total <= 0.0 {
                return Err(ConfigError::Validation(format!(
                    "assumption A2 violated: total initial density {total} at x = {x} (cell {k}) must satisfy \
                     0 < rho_* <= sum rho_i"
                )));
            }
            if !(theta.is_finite() && theta > 0.0) {
                return Err(ConfigError::Validation(format!(
                    "assumption A2 violated: initial temperature {theta} at x = {x} (cell {k}); need inf theta^0 > 0"
                )));
            }
            states.push(LocalState::new(rho, theta));
        }
        Ok(states)
    }

    /// Checks everything a run needs, including the sampled initial data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mixture_params()?;
        self.step_config()?;
        if self.output.every == 0 {
            return Err(ConfigError::Validation("output.every must be at least 1".into()));
        }
        self.initial_states(None)?;
        Ok(())
    }

    /// The resolved configuration as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    let scenario = file.initial.scenario.clone().unwrap_or_else(|| "default".into());
    let mut cfg = RunConfig::preset(&scenario).ok_or_else(|| {
        ConfigError::Validation(format!("unknown scenario `{scenario}`; available: default, {}", SCENARIOS.join(", ")))
    })?;
    let FileConfig { mixture, grid, stepper, initial, output } = file;
    overlay!(cfg.mixture, mixture, [molar_masses, friction, heat_capacity, kappa0, kappa2, lambda, theta0, epsilon]);
    overlay!(cfg.grid, grid, [cells, length]);
    overlay!(cfg.stepper, stepper, [tau, t_final, newton_tol, newton_max, damping, max_halvings, face_average]);
    overlay!(cfg.initial, initial, [scenario, density, temperature, perturbation]);
    overlay!(cfg.output, output, [directory, diagnostics, snapshot, error, every]);
    cfg.validate()?;
    Ok(cfg)
}

fn parse_error(text: &str, err: &toml::de::Error) -> ConfigError {
    let line = err.span().map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    ConfigError::Parse { line, message: err.message().to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in SCENARIOS.iter().chain(&["default"]) {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(RunConfig::preset("nope").is_none());
    }

    #[test]
    fn pair_keys() {
        assert_eq!(parse_pair("b12", 3).unwrap(), (0, 1));
        assert_eq!(parse_pair("b_23", 3).unwrap(), (1, 2));
        assert_eq!(parse_pair("b_3_1", 3).unwrap(), (2, 0));
        assert!(parse_pair("b11", 3).is_err());
        assert!(parse_pair("b14", 3).is_err());
        assert!(parse_pair("x12", 3).is_err());
    }

    #[test]
    fn profiles() {
        let s = Profile::Step { left: 1.0, right: 3.0, at: 0.5, width: 0.0 };
        assert_eq!((s.sample(0.2), s.sample(0.7)), (1.0, 3.0));
        let s = Profile::Step { left: 1.0, right: 3.0, at: 0.5, width: 0.1 };
        assert!((s.sample(0.5) - 2.0).abs() < 1e-15);
        let g = Profile::Gaussian { base: 1.0, amplitude: 0.5, center: 0.5, width: 0.1 };
        assert!((g.sample(0.5) - 1.5).abs() < 1e-15);
        assert!((g.sample(0.6) - (1.0 + 0.5 * (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn resolved_config_roundtrips() {
        for name in SCENARIOS {
            let cfg = RunConfig::preset(name).unwrap();
            assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
        }
    }
}
