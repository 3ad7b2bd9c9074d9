//! Time-loop orchestration and file output for single runs and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use msnt_core::diagnostics::{self, relative_entropy, restrict_states};
use msnt_core::{DiagnosticsRecord, Error, LocalState, MixtureParams, Scheme, TrajectoryState};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};

/// Tolerances applied by `--strict` after every step.
pub const MASS_DRIFT_TOL: f64 = 1e-10;
pub const ENERGY_DRIFT_TOL: f64 = 1e-8;
pub const MARGIN_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub strict: bool,
    pub seed: Option<u64>,
}

/// Why a run stopped early. Each variant maps to a process exit code.
#[derive(Debug, Clone)]
pub enum RunFailure {
    Config(ConfigError),
    Io(String),
    Step { step: usize, time: f64, error: Error },
    Invariant { step: usize, time: f64, check: &'static str, message: String },
}

impl RunFailure {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunFailure::Config(_) | RunFailure::Io(_) => 1,
            RunFailure::Step { .. } => 2,
            RunFailure::Invariant { .. } => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            RunFailure::Config(e) => {
                let (kind, line) = match e {
                    ConfigError::Parse { line, .. } => ("parse", *line),
                    ConfigError::Validation(_) => ("validation", None),
                };
                json!({ "error": "config", "kind": kind, "line": line, "message": e.to_string(), "exit_code": 1 })
            }
            RunFailure::Io(message) => json!({ "error": "io", "message": message, "exit_code": 1 }),
            RunFailure::Step { step, time, error } => {
                let mut v = json!({
                    "error": "step_failed",
                    "step": step,
                    "time": time,
                    "message": error.to_string(),
                    "exit_code": 2,
                });
                if let Error::StepFailed { halvings, last_residual } = error {
                    v["halvings"] = json!(halvings);
                    v["last_residual"] = json!(finite_or_null(*last_residual));
                }
                v
            }
            RunFailure::Invariant { step, time, check, message } => json!({
                "error": "invariant",
                "check": check,
                "step": step,
                "time": time,
                "message": message,
                "exit_code": 3,
            }),
        }
    }
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunFailure::Config(e) => write!(f, "configuration error: {e}"),
            RunFailure::Io(m) => write!(f, "i/o error: {m}"),
            RunFailure::Step { step, error, .. } => write!(f, "step {step}: {error}"),
            RunFailure::Invariant { step, message, .. } => write!(f, "step {step}: invariant violated: {message}"),
        }
    }
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<DiagnosticsRecord>,
    pub final_states: Vec<LocalState>,
    pub params: MixtureParams,
    pub cells: usize,
    pub length: f64,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn final_record(&self) -> &DiagnosticsRecord {
        self.records.last().expect("at least the initial row")
    }
}

/// Everything a run produced, successful or not, before it is written to disk.
struct Trace {
    records: Vec<DiagnosticsRecord>,
    last: TrajectoryState,
}

fn simulate(cfg: &RunConfig, opts: &RunOptions, scheme: &Scheme, trace: &mut Trace) -> Result<(), RunFailure> {
    let tol = scheme.config.newton_tol;
    let p = &scheme.params;
    let steps = cfg.steps();
    let first = trace.records[0].clone();
    for k in 1..=steps {
        let prev_record = trace.records.last().expect("initial row");
        let (mut outcome, mut record) = scheme.advance(&trace.last, prev_record).map_err(|error| RunFailure::Step {
            step: k,
            time: trace.last.time,
            error,
        })?;
        outcome.state.time = k as f64 * scheme.config.tau;
        record.time = outcome.state.time;
        trace.last = outcome.state;
        trace.records.push(record);
        if opts.strict {
            let record = trace.records.last().expect("just pushed");
            let fail = |check, message| RunFailure::Invariant { step: k, time: record.time, check, message };
            for (i, (m, m0)) in record.masses.iter().zip(&first.masses).enumerate() {
                let drift = (m - m0).abs() / m0.abs().max(f64::MIN_POSITIVE);
                if drift > MASS_DRIFT_TOL {
                    return Err(fail(
                        "mass",
                        format!("species {} mass drift {drift:e} exceeds {MASS_DRIFT_TOL:e}", i + 1),
                    ));
                }
            }
            if p.lambda == 0.0 {
                let drift = (record.energy - first.energy).abs() / first.energy.abs();
                if drift > ENERGY_DRIFT_TOL {
                    return Err(fail("energy", format!("energy drift {drift:e} exceeds {ENERGY_DRIFT_TOL:e}")));
                }
            }
            if p.epsilon == 0.0 && record.entropy_margin < -MARGIN_FACTOR * tol {
                return Err(fail(
                    "entropy",
                    format!("entropy margin {:e} below -{MARGIN_FACTOR} newton_tol", record.entropy_margin),
                ));
            }
            if record.fourier_dissipation < 0.0 || record.friction_dissipation < 0.0 {
                return Err(fail(
                    "dissipation",
                    format!(
                        "negative dissipation (fourier {:e}, friction {:e})",
                        record.fourier_dissipation, record.friction_dissipation
                    ),
                ));
            }
            if !record.entropy.is_finite() || !record.energy.is_finite() {
                return Err(fail("finite", "non-finite entropy or energy".into()));
            }
        }
    }
    Ok(())
}

/// Runs one trajectory and writes the diagnostics CSV, the final snapshot and, on
/// failure, the JSON error report into `cfg.output.directory`.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary, RunFailure> {
    let dir = cfg.output.directory.clone();
    let result = run_inner(cfg, opts, &dir);
    if let Err(failure) = &result {
        let _ = write_error(&dir.join(&cfg.output.error), failure);
    }
    result
}

fn run_inner(cfg: &RunConfig, opts: &RunOptions, dir: &Path) -> Result<RunSummary, RunFailure> {
    let started = Instant::now();
    let params = cfg.mixture_params().map_err(RunFailure::Config)?;
    let grid = cfg.grid().map_err(RunFailure::Config)?;
    let step_cfg = cfg.step_config().map_err(RunFailure::Config)?;
    let initial = cfg.initial_states(opts.seed).map_err(RunFailure::Config)?;
    let scheme =
        Scheme::new(params, grid, step_cfg).map_err(|e| RunFailure::Config(ConfigError::Validation(e.to_string())))?;
    let state =
        scheme.initial_state(&initial).map_err(|e| RunFailure::Config(ConfigError::Validation(e.to_string())))?;
    let first = diagnostics::record(&scheme, &state).map_err(|error| RunFailure::Step { step: 0, time: 0.0, error })?;

    let mut trace = Trace { records: vec![first], last: state };
    let outcome = simulate(cfg, opts, &scheme, &mut trace);

    fs::create_dir_all(dir).map_err(|e| RunFailure::Io(format!("{}: {e}", dir.display())))?;
    let header = config_header(cfg, opts);
    write_file(&dir.join(&cfg.output.diagnostics), &diagnostics_csv(&header, cfg, &trace.records))?;
    let final_states = trace.last.states(&scheme.params).map_err(|error| RunFailure::Step {
        step: trace.records.len() - 1,
        time: trace.last.time,
        error,
    })?;
    write_file(&dir.join(&cfg.output.snapshot), &snapshot_csv(&header, &scheme, &final_states))?;
    outcome?;
    let _ = fs::remove_file(dir.join(&cfg.output.error));

    Ok(RunSummary {
        records: trace.records,
        final_states,
        params: scheme.params.clone(),
        cells: scheme.grid.cells(),
        length: scheme.grid.length(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunFailure> {
    fs::write(path, contents).map_err(|e| RunFailure::Io(format!("{}: {e}", path.display())))
}

fn write_error(path: &Path, failure: &RunFailure) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(&failure.to_json()).expect("json") + "\n")
}

fn config_header(cfg: &RunConfig, opts: &RunOptions) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# msnt {} resolved configuration", env!("CARGO_PKG_VERSION"));
    if let Some(seed) = opts.seed {
        let _ = writeln!(out, "# seed = {seed}");
    }
    for line in cfg.to_toml().lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
    out
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn diagnostics_csv(header: &str, cfg: &RunConfig, records: &[DiagnosticsRecord]) -> String {
    let n = cfg.species();
    let mut out = header.to_string();
    out.push_str("time,H,energy");
    for i in 1..=n {
        let _ = write!(out, ",mass_{i}");
    }
    out.push_str(",fourier_dissipation,friction_dissipation,max_grad_p,sup_rho_theta2,entropy_margin\n");
    let last = records.len() - 1;
    for (k, r) in records.iter().enumerate() {
        if k % cfg.output.every != 0 && k != last {
            continue;
        }
        let mut fields = vec![fmt(r.time), fmt(r.entropy), fmt(r.energy)];
        fields.extend(r.masses.iter().map(|m| fmt(*m)));
        fields.extend(
            [r.fourier_dissipation, r.friction_dissipation, r.max_grad_p, r.sup_rho_theta2, r.entropy_margin]
                .into_iter()
                .map(fmt),
        );
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn snapshot_csv(header: &str, scheme: &Scheme, states: &[LocalState]) -> String {
    let n = scheme.params.species();
    let mut out = header.to_string();
    out.push('x');
    for i in 1..=n {
        let _ = write!(out, ",rho_{i}");
    }
    out.push_str(",theta\n");
    for (x, s) in scheme.grid.cell_centers().iter().zip(states) {
        let mut fields = vec![fmt(*x)];
        fields.extend(s.rho.iter().map(|r| fmt(*r)));
        fields.push(fmt(s.theta));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parameters that `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Cells,
    Epsilon,
    Lambda,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "N" | "n" | "cells" => Ok(SweepParam::Cells),
            "epsilon" => Ok(SweepParam::Epsilon),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(format!("unknown sweep parameter `{other}`; expected tau, N, epsilon or lambda")),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Cells => "N",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Lambda => "lambda",
        }
    }

    /// Copy of `cfg` with this parameter set to `value`, writing into `dir`.
    pub fn apply(self, cfg: &RunConfig, value: f64, dir: PathBuf) -> Result<RunConfig, ConfigError> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Tau => c.stepper.tau = value,
            SweepParam::Cells => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ConfigError::Validation(format!("N = {value} must be a positive integer")));
                }
                c.grid.cells = value as usize;
            }
            SweepParam::Epsilon => c.mixture.epsilon = value,
            SweepParam::Lambda => c.mixture.lambda = value,
        }
        c.output.directory = dir;
        c.validate()?;
        Ok(c)
    }

    /// Index of the reference run: finest resolution for `tau` and `N`, smallest
    /// value otherwise.
    fn reference(self, values: &[f64]) -> usize {
        let key = |v: f64| if self == SweepParam::Cells { -v } else { v };
        (0..values.len()).min_by(|&a, &b| key(values[a]).total_cmp(&key(values[b]))).expect("non-empty sweep")
    }
}

/// One line of the sweep summary.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub value: f64,
    pub outcome: Result<RunSummary, RunFailure>,
    pub relative_entropy_vs_reference: f64,
}

/// Number of worker threads for a sweep over `jobs` values.
pub fn sweep_threads(jobs: usize) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("MSNT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&t| t > 0);
    cap.unwrap_or(available).min(jobs).max(1)
}

/// Runs one trajectory per value concurrently, each in `<directory>/<param>=<label>`,
/// then writes `<directory>/summary.csv`. Failed runs are recorded and do not stop
/// the others.
pub fn sweep(
    cfg: &RunConfig,
    param: SweepParam,
    labels: &[String],
    opts: &RunOptions,
) -> Result<Vec<SweepRow>, RunFailure> {
    if labels.is_empty() {
        return Err(RunFailure::Config(ConfigError::Validation("sweep needs at least one value".into())));
    }
    let values = labels
        .iter()
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| RunFailure::Config(ConfigError::Validation(format!("sweep value `{l}` is not a number"))))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let configs = labels
        .iter()
        .zip(&values)
        .map(|(label, &v)| {
            let dir = cfg.output.directory.join(format!("{}={}", param.name(), label.trim()));
            param.apply(cfg, v, dir).map_err(RunFailure::Config)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary, RunFailure>>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..sweep_threads(configs.len()) {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = configs.get(job) else { break };
                let outcome = run(c, opts);
                results.lock().expect("no poisoned workers")[job] = Some(outcome);
            });
        }
    });
    let results: Vec<_> =
        results.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every job ran")).collect();

    let reference = param.reference(&values);
    let rel: Vec<f64> = results
        .iter()
        .map(|r| match (r, &results[reference]) {
            (Ok(run), Ok(best)) => relative_entropy_vs(run, best),
            _ => f64::NAN,
        })
        .collect();
    let rows: Vec<SweepRow> = labels
        .iter()
        .zip(values)
        .zip(results)
        .zip(rel)
        .map(|(((label, value), outcome), rel)| SweepRow {
            label: label.trim().to_string(),
            value,
            outcome,
            relative_entropy_vs_reference: rel,
        })
        .collect();

    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(|e| RunFailure::Io(format!("{}: {e}", dir.display())))?;
    let mut out = config_header(cfg, opts);
    let _ = writeln!(out, "# sweep parameter = {}", param.name());
    out.push_str("value,final_H,final_rel_entropy_vs_finest,wall_time,status\n");
    for row in &rows {
        let (h, wall, status) = match &row.outcome {
            Ok(s) => (fmt(s.final_record().entropy), format!("{:.3}", s.wall_time), "ok".to_string()),
            Err(f) => ("nan".into(), "nan".into(), format!("exit_{}", f.exit_code())),
        };
        let rel = if row.relative_entropy_vs_reference.is_nan() {
            "nan".into()
        } else {
            fmt(row.relative_entropy_vs_reference)
        };
        let _ = writeln!(out, "{},{h},{rel},{wall},{status}", row.label);
    }
    write_file(&dir.join("summary.csv"), &out)?;
    Ok(rows)
}

/// Relative entropy of `run`'s final state with respect to `reference`'s, after
/// averaging the reference onto `run`'s grid. NaN when the grids are not nested.
fn relative_entropy_vs(run: &RunSummary, reference: &RunSummary) -> f64 {
    if !reference.cells.is_multiple_of(run.cells) {
        return f64::NAN;
    }
    let factor = reference.cells / run.cells;
    let restricted = restrict_states(&reference.final_states, factor);
    let grid = match msnt_core::Grid::new(run.cells, run.length) {
        Ok(g) => g,
        Err(_) => return f64::NAN,
    };
    relative_entropy(&run.params, &grid, &run.final_states, &restricted)
}
