//! Implicit Euler in entropy variables.
//!
//! Unknowns per cell are `(w_1, ..., w_{n-1}, w)`. Densities and temperature are
//! recovered through the entropy-variable inversion, so every iterate is a strictly
//! positive state and no clipping is ever needed. The total density field is frozen:
//! summing the mass balances removes all fluxes.

use nalgebra::DMatrix;

use crate::banded::BandedMatrix;
use crate::constitutive::{
    entropy_vars_from_state, internal_energy, state_from_entropy_vars, LocalEntropyVars, LocalState, MixtureParams,
};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::flux::{self, FaceFluxes};
use crate::grid::{face_temperature, FaceAverage, Grid};

/// Relative floor applied to vanishing initial densities.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub tau: f64,
    /// Sup-norm tolerance on the residual.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Backtracking factor of the damped Newton update.
    pub damping: f64,
    /// Number of times a failed step may be retried with half the step size.
    pub max_halvings: usize,
    pub face_average: FaceAverage,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            newton_tol: 1e-10,
            newton_max: 30,
            damping: 0.5,
            max_halvings: 8,
            face_average: FaceAverage::Arithmetic,
        }
    }
}

impl StepConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("time step tau = {} must be positive", self.tau)));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol >= 1e-13) {
            return Err(Error::InvalidParameter(format!("newton_tol = {} must be at least 1e-13", self.newton_tol)));
        }
        if self.newton_max == 0 {
            return Err(Error::InvalidParameter("newton_max must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidParameter(format!("damping = {} must lie in (0, 1)", self.damping)));
        }
        Ok(())
    }
}

/// Entropy-variable fields plus the frozen total density.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    /// Cell-major: `vars[k * n + i]` is `w_{i+1}` for `i < n - 1`, `log theta` for `i = n - 1`.
    pub vars: Vec<f64>,
    pub rho_total: Vec<f64>,
    pub time: f64,
    species: usize,
}

impl TrajectoryState {
    /// Converts primal cell states, flooring vanishing densities at `1e-12 rho`.
    pub fn from_states(p: &MixtureParams, states: &[LocalState], time: f64) -> Result<Self> {
        let n = p.species();
        let mut vars = Vec::with_capacity(states.len() * n);
        let mut rho_total = Vec::with_capacity(states.len());
        for (k, s) in states.iter().enumerate() {
            if s.rho.len() != n {
                return Err(Error::InvalidState(format!("cell {k}: expected {n} densities")));
            }
            let total = s.total_density();
            if !(total.is_finite() && total > 0.0) {
                return Err(Error::InvalidState(format!("cell {k}: total density {total} is not positive")));
            }
            if s.rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::InvalidState(format!("cell {k}: negative density")));
            }
            let floored =
                LocalState { rho: s.rho.iter().map(|r| r.max(DENSITY_FLOOR * total)).collect(), theta: s.theta };
            floored.validate().map_err(|e| Error::InvalidState(format!("cell {k}: {e}")))?;
            let v = entropy_vars_from_state(p, &floored);
            vars.extend_from_slice(&v.w);
            vars.push(v.wlog);
            rho_total.push(floored.total_density());
        }
        Ok(Self { vars, rho_total, time, species: n })
    }

    /// Same total density and time, different entropy variables.
    pub fn with_vars(&self, vars: Vec<f64>) -> Self {
        assert_eq!(vars.len(), self.vars.len(), "entropy-variable field has the wrong size");
        Self { vars, ..self.clone() }
    }

    pub fn cells(&self) -> usize {
        self.rho_total.len()
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn cell_vars(&self, k: usize) -> LocalEntropyVars {
        let n = self.species;
        let c = &self.vars[k * n..(k + 1) * n];
        LocalEntropyVars { w: c[..n - 1].to_vec(), wlog: c[n - 1] }
    }

    pub fn states(&self, p: &MixtureParams) -> Result<Vec<LocalState>> {
        recover_states(p, &self.vars, &self.rho_total)
    }
}

fn recover_states(p: &MixtureParams, vars: &[f64], rho_total: &[f64]) -> Result<Vec<LocalState>> {
    let n = p.species();
    rho_total
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let c = &vars[k * n..(k + 1) * n];
            let v = LocalEntropyVars { w: c[..n - 1].to_vec(), wlog: c[n - 1] };
            state_from_entropy_vars(p, &v, rho)
        })
        .collect()
}

/// Conserved quantities `(rho_1, ..., rho_{n-1}, E)` per cell, the time-derivative part
/// of the residual.
fn conserved(p: &MixtureParams, states: &[LocalState]) -> Vec<f64> {
    let n = p.species();
    let mut out = Vec::with_capacity(states.len() * n);
    for s in states {
        out.extend_from_slice(&s.rho[..n - 1]);
        out.push(internal_energy(p, s));
    }
    out
}

/// Result of one accepted time step of size `tau`.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: TrajectoryState,
    /// Number of sub-steps used (a power of two).
    pub substeps: usize,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    /// `sum_s tau_s D_s`: total dissipation integrated over the step.
    pub dissipated: f64,
    /// `sum_s tau_s (F_N/theta_{N-1} - F_0/theta_0)`.
    pub boundary_entropy: f64,
}

struct SubStep {
    vars: Vec<f64>,
    iterations: usize,
    residual_norm: f64,
}

/// The discrete problem: mixture, grid and solver settings.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub params: MixtureParams,
    pub grid: Grid,
    pub config: StepConfig,
}

impl Scheme {
    pub fn new(params: MixtureParams, grid: Grid, config: StepConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        Ok(Self { params, grid, config })
    }

    pub fn unknowns(&self) -> usize {
        self.grid.cells() * self.params.species()
    }

    /// Cells on either side that a residual row depends on.
    pub fn coupling_radius(&self) -> usize {
        if self.params.epsilon > 0.0 {
            2
        } else {
            1
        }
    }

    pub fn initial_state(&self, states: &[LocalState]) -> Result<TrajectoryState> {
        if states.len() != self.grid.cells() {
            return Err(Error::InvalidState(format!(
                "expected {} cell states, got {}",
                self.grid.cells(),
                states.len()
            )));
        }
        TrajectoryState::from_states(&self.params, states, 0.0)
    }

    pub fn face_fluxes(&self, states: &[LocalState], with_dissipation: bool) -> Result<FaceFluxes> {
        flux::assemble(&self.params, &self.grid, self.config.face_average, states, with_dissipation)
    }

    /// Residual of the implicit Euler step from `prev` with the configured `tau`.
    pub fn residual(&self, prev: &TrajectoryState, trial: &[f64]) -> Result<Vec<f64>> {
        let prev_conserved = conserved(&self.params, &prev.states(&self.params)?);
        self.residual_from(&prev_conserved, &prev.rho_total, trial, self.config.tau)
    }

    fn residual_from(&self, prev_conserved: &[f64], rho_total: &[f64], trial: &[f64], tau: f64) -> Result<Vec<f64>> {
        let p = &self.params;
        let n = p.species();
        let cells = self.grid.cells();
        let dx = self.grid.dx();
        let states = recover_states(p, trial, rho_total)?;
        let now = conserved(p, &states);
        let fluxes = self.face_fluxes(&states, false)?;

        let mut res = vec![0.0; cells * n];
        for k in 0..cells {
            for i in 0..n - 1 {
                let row = k * n + i;
                let div = (fluxes.mass[k + 1][i] - fluxes.mass[k][i]) / dx;
                res[row] = (now[row] - prev_conserved[row]) / tau + div;
            }
            let row = k * n + n - 1;
            let div = (fluxes.energy[k + 1] - fluxes.energy[k]) / dx;
            res[row] = (now[row] - prev_conserved[row]) / tau + div;
        }
        if p.epsilon > 0.0 {
            self.add_regularization(trial, &states, &mut res);
        }
        Ok(res)
    }

    /// Higher-order regularization terms; the fourth-order parts use the Neumann
    /// Laplacian applied twice.
    fn add_regularization(&self, trial: &[f64], states: &[LocalState], res: &mut [f64]) {
        let p = &self.params;
        let n = p.species();
        let cells = self.grid.cells();
        let eps = p.epsilon;
        let g = &self.grid;
        let field = |i: usize| -> Vec<f64> { (0..cells).map(|k| trial[k * n + i]).collect() };

        for i in 0..n - 1 {
            let wi = field(i);
            let bi = g.laplacian(&g.laplacian(&wi));
            for k in 0..cells {
                res[k * n + i] += eps * (bi[k] + wi[k]);
            }
        }

        let w = field(n - 1);
        let w0 = p.theta0.ln();
        let theta: Vec<f64> = states.iter().map(|s| s.theta).collect();
        let lap = g.laplacian(&w);
        let weighted: Vec<f64> = lap.iter().zip(&theta).map(|(l, t)| l * t).collect();
        let fourth = g.laplacian(&weighted);
        let grad = g.face_gradient(&w);
        let mut cubic = vec![0.0; g.faces()];
        for f in 1..cells {
            let tf = face_temperature(theta[f - 1], theta[f]);
            cubic[f] = tf * grad[f] * grad[f] * grad[f];
        }
        let div_cubic = g.divergence(&cubic);
        for k in 0..cells {
            let lower = (p.theta0 + theta[k]) * (w[k] - w0);
            res[k * n + n - 1] += eps * (lower + fourth[k] - div_cubic[k]);
        }
    }

    /// Forward-difference Jacobian assembled by colouring cells `2r + 1` apart, `r` the
    /// coupling radius, so each residual evaluation yields one column per colour class.
    pub fn jacobian(&self, prev: &TrajectoryState, trial: &[f64]) -> Result<BandedMatrix> {
        let prev_conserved = conserved(&self.params, &prev.states(&self.params)?);
        self.jacobian_from(&prev_conserved, &prev.rho_total, trial, self.config.tau, None)
    }

    fn jacobian_from(
        &self,
        prev_conserved: &[f64],
        rho_total: &[f64],
        trial: &[f64],
        tau: f64,
        base: Option<&[f64]>,
    ) -> Result<BandedMatrix> {
        let n = self.params.species();
        let cells = self.grid.cells();
        let radius = self.coupling_radius();
        let stride = 2 * radius + 1;
        let bw = radius * n + n - 1;
        let owned;
        let r0 = match base {
            Some(r) => r,
            None => {
                owned = self.residual_from(prev_conserved, rho_total, trial, tau)?;
                &owned
            }
        };
        let mut jac = BandedMatrix::zeros(cells * n, bw, bw);
        let mut x = trial.to_vec();
        for colour in 0..stride.min(cells) {
            for comp in 0..n {
                let mut steps = Vec::new();
                for k in (colour..cells).step_by(stride) {
                    let col = k * n + comp;
                    let h = fd_step(trial[col]);
                    x[col] = trial[col] + h;
                    steps.push((k, col, x[col] - trial[col]));
                }
                let r = self.residual_from(prev_conserved, rho_total, &x, tau)?;
                for &(k, col, h) in &steps {
                    let lo = k.saturating_sub(radius);
                    let hi = (k + radius).min(cells - 1);
                    for c in lo..=hi {
                        for row in c * n..(c + 1) * n {
                            jac.set(row, col, (r[row] - r0[row]) / h);
                        }
                    }
                    x[col] = trial[col];
                }
            }
        }
        Ok(jac)
    }

    /// Column-by-column forward-difference Jacobian; reference for the coloured one.
    pub fn dense_jacobian(&self, prev: &TrajectoryState, trial: &[f64]) -> Result<DMatrix<f64>> {
        let prev_conserved = conserved(&self.params, &prev.states(&self.params)?);
        let tau = self.config.tau;
        let r0 = self.residual_from(&prev_conserved, &prev.rho_total, trial, tau)?;
        let size = trial.len();
        let mut jac = DMatrix::zeros(size, size);
        let mut x = trial.to_vec();
        for col in 0..size {
            x[col] = trial[col] + fd_step(trial[col]);
            let h = x[col] - trial[col];
            let r = self.residual_from(&prev_conserved, &prev.rho_total, &x, tau)?;
            for row in 0..size {
                jac[(row, col)] = (r[row] - r0[row]) / h;
            }
            x[col] = trial[col];
        }
        Ok(jac)
    }

    /// Damped Newton for one implicit Euler step of size `tau`. On failure returns the
    /// last residual norm.
    fn newton(&self, prev: &TrajectoryState, prev_conserved: &[f64], tau: f64) -> std::result::Result<SubStep, f64> {
        let cfg = &self.config;
        let rho_total = &prev.rho_total;
        let mut x = prev.vars.clone();
        let mut r = self.residual_from(prev_conserved, rho_total, &x, tau).map_err(|_| f64::NAN)?;
        let mut norm = sup_norm(&r);
        for it in 0..cfg.newton_max {
            if norm <= cfg.newton_tol {
                return Ok(SubStep { vars: x, iterations: it, residual_norm: norm });
            }
            let jac = self.jacobian_from(prev_conserved, rho_total, &x, tau, Some(&r)).map_err(|_| norm)?;
            let lu = jac.factorize().map_err(|_| norm)?;
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let dx = lu.solve(&neg);
            if dx.iter().any(|v| !v.is_finite()) {
                return Err(norm);
            }
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
                if let Ok(rt) = self.residual_from(prev_conserved, rho_total, &trial, tau) {
                    let nt = sup_norm(&rt);
                    if nt < norm || nt <= cfg.newton_tol {
                        x = trial;
                        r = rt;
                        norm = nt;
                        break;
                    }
                }
                alpha *= cfg.damping;
                if alpha < 1e-4 {
                    return Err(norm);
                }
            }
        }
        if norm <= cfg.newton_tol {
            Ok(SubStep { vars: x, iterations: cfg.newton_max, residual_norm: norm })
        } else {
            Err(norm)
        }
    }

    /// Advances by the configured `tau`, retrying with `tau / 2^k` sub-steps on failure.
    pub fn step(&self, prev: &TrajectoryState) -> Result<StepOutcome> {
        let tau = self.config.tau;
        let mut last_residual = f64::NAN;
        'levels: for level in 0..=self.config.max_halvings {
            let pieces = 1usize << level;
            let sub_tau = tau / pieces as f64;
            let mut state = prev.clone();
            let mut iterations = 0;
            let mut residual_norm: f64 = 0.0;
            let mut dissipated = 0.0;
            let mut boundary_entropy = 0.0;
            for s in 0..pieces {
                let prev_conserved = conserved(&self.params, &state.states(&self.params)?);
                match self.newton(&state, &prev_conserved, sub_tau) {
                    Ok(sub) => {
                        iterations += sub.iterations;
                        residual_norm = residual_norm.max(sub.residual_norm);
                        state = TrajectoryState {
                            vars: sub.vars,
                            rho_total: state.rho_total,
                            time: prev.time + (s + 1) as f64 * sub_tau,
                            species: state.species,
                        };
                        let states = state.states(&self.params)?;
                        let fluxes = self.face_fluxes(&states, true)?;
                        let dx = self.grid.dx();
                        let rate: f64 = fluxes.fourier.iter().chain(&fluxes.friction).sum::<f64>() * dx;
                        dissipated += sub_tau * rate;
                        boundary_entropy += sub_tau * flux::boundary_entropy_flux(&fluxes, &states);
                    }
                    Err(norm) => {
                        last_residual = norm;
                        continue 'levels;
                    }
                }
            }
            state.time = prev.time + tau;
            return Ok(StepOutcome {
                state,
                substeps: pieces,
                newton_iterations: iterations,
                residual_norm,
                dissipated,
                boundary_entropy,
            });
        }
        Err(Error::StepFailed { halvings: self.config.max_halvings, last_residual })
    }

    /// Steps once and produces the diagnostics row, carrying the running supremum of
    /// `int rho theta^2` and the entropy margin relative to `prev_record`.
    pub fn advance(
        &self,
        prev: &TrajectoryState,
        prev_record: &DiagnosticsRecord,
    ) -> Result<(StepOutcome, DiagnosticsRecord)> {
        let outcome = self.step(prev)?;
        let mut record = diagnostics::record(self, &outcome.state)?;
        record.step_dissipation = outcome.dissipated;
        record.step_boundary_entropy = outcome.boundary_entropy;
        record.entropy_margin = prev_record.entropy + outcome.boundary_entropy - record.entropy - outcome.dissipated;
        record.sup_rho_theta2 = prev_record.sup_rho_theta2.max(record.rho_theta2);
        Ok((outcome, record))
    }

    /// Runs `steps` steps from `initial`, calling `observe` after every accepted step.
    pub fn run<F>(&self, initial: &TrajectoryState, steps: usize, mut observe: F) -> Result<TrajectoryState>
    where
        F: FnMut(&StepOutcome, &DiagnosticsRecord),
    {
        let mut state = initial.clone();
        let mut record = diagnostics::record(self, &state)?;
        for _ in 0..steps {
            let (outcome, next) = self.advance(&state, &record)?;
            observe(&outcome, &next);
            state = outcome.state;
            record = next;
        }
        Ok(state)
    }
}

fn fd_step(x: f64) -> f64 {
    1e-7 * (1.0 + x.abs())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}
