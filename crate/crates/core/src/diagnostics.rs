//! Entropy, energy and dissipation functionals, plus the refinement experiments built
//! on them.
//!
//! All integrals use the midpoint rule on cells, the same quadrature the scheme itself
//! is built on, so the discrete entropy inequality checked here is exactly the one the
//! stepper satisfies.

use nalgebra::{DMatrix, DVector};

use crate::constitutive::{
    density_sensitivity, entropy_density, internal_energy, relative_entropy_density, state_from_entropy_vars,
    total_pressure, LocalEntropyVars, LocalState, MixtureParams,
};
use crate::error::{Error, Result};
use crate::flux;
use crate::grid::Grid;
use crate::stepper::{Scheme, StepConfig, TrajectoryState};

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    /// Total mathematical entropy `H`.
    pub entropy: f64,
    pub energy: f64,
    pub masses: Vec<f64>,
    /// `int kappa |grad log theta|^2` at this time level.
    pub fourier_dissipation: f64,
    /// `1/2 int sum b_ij rho_i rho_j |u_i - u_j|^2` at this time level.
    pub friction_dissipation: f64,
    /// `max |grad p|` over interior faces.
    pub max_grad_p: f64,
    /// `int rho theta^2` at this time level.
    pub rho_theta2: f64,
    /// Running supremum of `int rho theta^2`.
    pub sup_rho_theta2: f64,
    /// `H^{k-1} + tau B^k - H^k - tau D^k`, where `B` is the boundary entropy flux; zero
    /// on the initial row.
    pub entropy_margin: f64,
    /// Dissipation integrated over the step that produced this row.
    pub step_dissipation: f64,
    /// Boundary entropy flux integrated over the step that produced this row.
    pub step_boundary_entropy: f64,
    pub relative_entropy: Option<f64>,
}

impl DiagnosticsRecord {
    pub fn dissipation(&self) -> f64 {
        self.fourier_dissipation + self.friction_dissipation
    }
}

pub fn total_entropy(p: &MixtureParams, grid: &Grid, states: &[LocalState]) -> f64 {
    let h: Vec<f64> = states.iter().map(|s| entropy_density(p, s)).collect();
    grid.integrate(&h)
}

pub fn total_energy(p: &MixtureParams, grid: &Grid, states: &[LocalState]) -> f64 {
    let e: Vec<f64> = states.iter().map(|s| internal_energy(p, s)).collect();
    grid.integrate(&e)
}

pub fn species_masses(grid: &Grid, states: &[LocalState]) -> Vec<f64> {
    let n = states.first().map_or(0, |s| s.rho.len());
    (0..n).map(|i| grid.integrate(&states.iter().map(|s| s.rho[i]).collect::<Vec<_>>())).collect()
}

/// `int rho theta^2`.
pub fn rho_theta2(grid: &Grid, states: &[LocalState]) -> f64 {
    let v: Vec<f64> = states.iter().map(|s| s.total_density() * s.theta * s.theta).collect();
    grid.integrate(&v)
}

pub fn max_pressure_gradient(p: &MixtureParams, grid: &Grid, states: &[LocalState]) -> f64 {
    let pressure: Vec<f64> = states.iter().map(|s| total_pressure(p, s)).collect();
    grid.face_gradient(&pressure).iter().fold(0.0, |m, g| m.max(g.abs()))
}

pub fn relative_entropy(p: &MixtureParams, grid: &Grid, states: &[LocalState], reference: &[LocalState]) -> f64 {
    let d: Vec<f64> = states.iter().zip(reference).map(|(s, r)| relative_entropy_density(p, s, r)).collect();
    grid.integrate(&d)
}

/// Fourier and friction dissipation `(D_F, D_M)` of a cell state field.
pub fn dissipation(scheme: &Scheme, states: &[LocalState]) -> Result<(f64, f64)> {
    let fluxes = scheme.face_fluxes(states, true)?;
    let dx = scheme.grid.dx();
    Ok((fluxes.fourier.iter().sum::<f64>() * dx, fluxes.friction.iter().sum::<f64>() * dx))
}

/// Diagnostics of a single state; step-related fields are left at zero.
pub fn record(scheme: &Scheme, state: &TrajectoryState) -> Result<DiagnosticsRecord> {
    let p = &scheme.params;
    let g = &scheme.grid;
    let states = state.states(p)?;
    let (fourier, friction) = dissipation(scheme, &states)?;
    let rt2 = rho_theta2(g, &states);
    Ok(DiagnosticsRecord {
        time: state.time,
        entropy: total_entropy(p, g, &states),
        energy: total_energy(p, g, &states),
        masses: species_masses(g, &states),
        fourier_dissipation: fourier,
        friction_dissipation: friction,
        max_grad_p: max_pressure_gradient(p, g, &states),
        rho_theta2: rt2,
        sup_rho_theta2: rt2,
        entropy_margin: 0.0,
        step_dissipation: 0.0,
        step_boundary_entropy: 0.0,
        relative_entropy: None,
    })
}

/// Outcome of the discrete entropy inequality `H^k + tau D^k <= H^{k-1} + slack`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyCheck {
    pub passed: bool,
    /// `rhs - lhs`, nonnegative on success.
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn entropy_inequality_check(
    prev: &DiagnosticsRecord,
    next: &DiagnosticsRecord,
    tau: f64,
    slack: f64,
) -> EntropyCheck {
    let lhs = next.entropy + tau * next.dissipation();
    let rhs = prev.entropy + slack;
    let margin = rhs - lhs;
    EntropyCheck { passed: margin >= 0.0, margin, lhs, rhs }
}

/// Uniform-temperature equilibrium with the same species masses, energy and total
/// density field as `states`.
///
/// The equilibrium has constant relative entropy variables; they are found by Newton on
/// the mass constraints, whose Jacobian is the integrated density sensitivity.
pub fn equilibrium(p: &MixtureParams, grid: &Grid, states: &[LocalState]) -> Result<Vec<LocalState>> {
    let n = p.species();
    let masses = species_masses(grid, states);
    let rho_total: Vec<f64> = states.iter().map(|s| s.total_density()).collect();
    let theta = total_energy(p, grid, states) / (p.heat_capacity * grid.integrate(&rho_total));
    let wlog = theta.ln();

    let build = |w: &[f64]| -> Result<Vec<LocalState>> {
        let v = LocalEntropyVars { w: w.to_vec(), wlog };
        rho_total.iter().map(|&r| state_from_entropy_vars(p, &v, r)).collect()
    };

    // start from the entropy variables of the spatially averaged composition
    let total_mass: f64 = masses.iter().sum();
    let mean = LocalState::new(masses.iter().map(|m| m / total_mass).collect(), theta);
    let mut w = crate::constitutive::entropy_vars_from_state(p, &mean).w;
    let scale = masses[..n - 1].iter().fold(0.0f64, |a, m| a.max(m.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let eq = build(&w)?;
        let current = species_masses(grid, &eq);
        let res = DVector::from_fn(n - 1, |i, _| current[i] - masses[i]);
        if res.amax() <= 1e-14 * scale {
            return Ok(eq);
        }
        let mut jac = DMatrix::zeros(n - 1, n - 1);
        for s in &eq {
            jac += density_sensitivity(p, s)? * grid.dx();
        }
        let step = jac.lu().solve(&res).ok_or(Error::Singular { pivot: 0.0, threshold: 0.0 })?;
        // keep each update moderate; the mass map is exponential in w
        let damp = 1.0 / (1.0 + step.amax() / 2.0).max(1.0);
        for i in 0..n - 1 {
            w[i] -= damp * step[i];
        }
    }
    let eq = build(&w)?;
    let current = species_masses(grid, &eq);
    let worst = (0..n - 1).fold(0.0f64, |a, i| a.max((current[i] - masses[i]).abs()));
    if worst <= 1e-12 * scale {
        Ok(eq)
    } else {
        Err(Error::InversionFailed { iterations: 100, residual: worst })
    }
}

/// Averages groups of `factor` fine cells: densities by plain averaging, temperature
/// weighted by density so that mass and energy are preserved.
pub fn restrict_states(states: &[LocalState], factor: usize) -> Vec<LocalState> {
    states
        .chunks(factor)
        .map(|chunk| {
            let n = chunk[0].rho.len();
            let len = chunk.len() as f64;
            let rho: Vec<f64> = (0..n).map(|i| chunk.iter().map(|s| s.rho[i]).sum::<f64>() / len).collect();
            let mass: f64 = chunk.iter().map(|s| s.total_density()).sum();
            let heat: f64 = chunk.iter().map(|s| s.total_density() * s.theta).sum();
            LocalState { rho, theta: heat / mass }
        })
        .collect()
}

/// Relative entropy history of one refinement pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPair {
    pub coarse_cells: usize,
    pub tau: f64,
    /// `(t, relative entropy)` sampled at every coarse step, starting at `t = 0`.
    pub history: Vec<(f64, f64)>,
    /// Observed `max |u_i|` and `max |grad log theta|` of the finer run.
    pub sup_velocity: f64,
    pub sup_grad_log_theta: f64,
}

impl RefinementPair {
    pub fn final_relative_entropy(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakStrongReport {
    /// Run on `N` cells vs its refinement, and the `2N` run vs its refinement.
    pub coarse: RefinementPair,
    pub fine: RefinementPair,
    /// `coarse.final / fine.final`.
    pub ratio: f64,
    pub gronwall: GronwallReport,
}

/// Solves on grids with `N`, `2N` and `4N` cells and steps `tau`, `tau/2`, `tau/4`, all
/// started from restrictions of the same data on the finest grid.
///
/// The finer of each pair stands in for the strong solution; its solution is restricted
/// to the coarser grid before comparing.
pub fn weak_strong_experiment(
    p: &MixtureParams,
    coarse: &Grid,
    cfg: &StepConfig,
    finest_initial: &[LocalState],
    steps: usize,
) -> Result<WeakStrongReport> {
    if p.lambda != 0.0 {
        return Err(Error::InvalidParameter("weak-strong experiment requires lambda = 0".into()));
    }
    if finest_initial.len() != 4 * coarse.cells() {
        return Err(Error::InvalidState(format!(
            "expected {} finest-grid cells, got {}",
            4 * coarse.cells(),
            finest_initial.len()
        )));
    }
    let runs: Vec<Vec<Vec<LocalState>>> = (0..3)
        .map(|level| {
            let factor = 1usize << level;
            let grid = coarse.refined(factor);
            let config = cfg.clone().with_tau(cfg.tau / factor as f64);
            let initial = restrict_states(finest_initial, 4 / factor);
            sampled_trajectory(p, grid, config, &initial, steps, factor)
        })
        .collect::<Result<_>>()?;

    let pair = |level: usize| -> Result<RefinementPair> {
        let grid = coarse.refined(1 << level);
        let history = runs[level]
            .iter()
            .zip(&runs[level + 1])
            .enumerate()
            .map(|(k, (a, b))| {
                let t = k as f64 * cfg.tau;
                (t, relative_entropy(p, &grid, a, &restrict_states(b, 2)))
            })
            .collect();
        let finer = Scheme::new(p.clone(), coarse.refined(2 << level), cfg.clone())?;
        let (sup_velocity, sup_grad_log_theta) = observed_sup_norms(&finer, &runs[level + 1])?;
        Ok(RefinementPair {
            coarse_cells: grid.cells(),
            tau: cfg.tau / (1 << level) as f64,
            history,
            sup_velocity,
            sup_grad_log_theta,
        })
    };
    let coarse_pair = pair(0)?;
    let fine_pair = pair(1)?;
    let ratio = coarse_pair.final_relative_entropy() / fine_pair.final_relative_entropy();
    // restricted initial data agree exactly, so the fit starts at the first step
    let gronwall = gronwall_monitor(&coarse_pair.history[1.min(coarse_pair.history.len())..]);
    Ok(WeakStrongReport { coarse: coarse_pair, fine: fine_pair, ratio, gronwall })
}

/// Runs `steps * substeps` steps and keeps every `substeps`-th state, including the
/// initial one.
fn sampled_trajectory(
    p: &MixtureParams,
    grid: Grid,
    config: StepConfig,
    initial: &[LocalState],
    steps: usize,
    substeps: usize,
) -> Result<Vec<Vec<LocalState>>> {
    let scheme = Scheme::new(p.clone(), grid, config)?;
    let mut state = scheme.initial_state(initial)?;
    let mut out = vec![state.states(p)?];
    for _ in 0..steps {
        for _ in 0..substeps {
            state = scheme.step(&state)?.state;
        }
        out.push(state.states(p)?);
    }
    Ok(out)
}

/// Largest species velocity and temperature log-gradient seen along a trajectory.
fn observed_sup_norms(scheme: &Scheme, trajectory: &[Vec<LocalState>]) -> Result<(f64, f64)> {
    let dx = scheme.grid.dx();
    let mut sup_u = 0.0f64;
    let mut sup_g = 0.0f64;
    for states in trajectory {
        let fluxes = scheme.face_fluxes(states, false)?;
        for f in 1..states.len() {
            let (l, r) = (&states[f - 1], &states[f]);
            for (i, j) in fluxes.mass[f].iter().enumerate() {
                let rho = scheme.config.face_average.apply(l.rho[i], r.rho[i]);
                sup_u = sup_u.max((j / rho).abs());
            }
            sup_g = sup_g.max(((r.theta.ln() - l.theta.ln()) / dx).abs());
        }
    }
    Ok((sup_u, sup_g))
}

/// Exponential growth check for a relative entropy history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallReport {
    /// Rate `C` fitted on the first 10% of the history.
    pub fitted_rate: f64,
    /// `e(T) / e(0)`.
    pub growth: f64,
    /// `exp(C T)`.
    pub bound: f64,
    pub consistent: bool,
}

/// Fits `e(t) <= e(0) exp(C t)` on the first 10% of the samples and compares the final
/// growth against it. The fitted rate is floored at zero.
pub fn gronwall_monitor(history: &[(f64, f64)]) -> GronwallReport {
    let degenerate = GronwallReport { fitted_rate: 0.0, growth: 1.0, bound: 1.0, consistent: true };
    let Some(&(t0, e0)) = history.first() else {
        return degenerate;
    };
    let &(t_end, e_end) = history.last().unwrap();
    if !(e0 > 0.0) || history.len() < 2 {
        return degenerate;
    }
    let k = (history.len() / 10).max(1);
    let (t_fit, e_fit) = history[k];
    let rate = if t_fit > t0 && e_fit > 0.0 { ((e_fit / e0).ln() / (t_fit - t0)).max(0.0) } else { 0.0 };
    let growth = e_end / e0;
    let bound = (rate * (t_end - t0)).exp();
    GronwallReport { fitted_rate: rate, growth, bound, consistent: growth <= bound * (1.0 + 1e-9) }
}

/// `|H(T) - H(0) + int_0^T D|` for `steps` steps of `scheme`, with `lambda = 0`.
pub fn entropy_equality_defect(scheme: &Scheme, initial: &[LocalState], steps: usize) -> Result<f64> {
    let state = scheme.initial_state(initial)?;
    let h0 = total_entropy(&scheme.params, &scheme.grid, initial);
    let mut dissipated = 0.0;
    let mut boundary = 0.0;
    let last = scheme.run(&state, steps, |outcome, _| {
        dissipated += outcome.dissipated;
        boundary += outcome.boundary_entropy;
    })?;
    let h = total_entropy(&scheme.params, &scheme.grid, &last.states(&scheme.params)?);
    Ok((h - h0 + dissipated - boundary).abs())
}

/// Boundary entropy flux per unit time at a state.
pub fn boundary_entropy_rate(scheme: &Scheme, states: &[LocalState]) -> Result<f64> {
    let fluxes = scheme.face_fluxes(states, false)?;
    Ok(flux::boundary_entropy_flux(&fluxes, states))
}
