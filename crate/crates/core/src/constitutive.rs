//! Thermodynamic closures of a simple ideal-gas mixture.
//!
//! Every species carries the partial free energy
//! `psi_i = theta (rho_i/m_i)(log(rho_i/m_i) - 1) - c_w rho_i theta (log theta - 1)`,
//! from which chemical potentials, entropy, internal energy and partial pressures
//! follow. The solver never works with densities directly: it evolves the relative
//! entropy variables `w_i = (mu_i - mu_n)/theta` and `w = log theta`, and this module
//! provides the bijection between the two representations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Physical constants of the mixture together with boundary data.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    /// Molar masses `m_i > 0`, one per species.
    pub molar_masses: Vec<f64>,
    /// Symmetric friction coefficients `b_ij > 0` (diagonal ignored).
    pub friction: DMatrix<f64>,
    /// Heat capacity `c_w > 0`.
    pub heat_capacity: f64,
    /// Conductivity law `kappa(theta) = kappa0 + kappa2 * theta^2`.
    pub kappa0: f64,
    pub kappa2: f64,
    /// Boundary heat-exchange constant `lambda >= 0`.
    pub lambda: f64,
    /// Background temperature `theta_0 > 0`.
    pub theta0: f64,
    /// Strength of the optional higher-order regularization, 0 disables it.
    pub epsilon: f64,
}

impl MixtureParams {
    /// Mixture with unit conductivity coefficients, closed boundary and no regularization.
    pub fn new(molar_masses: Vec<f64>, friction: DMatrix<f64>, heat_capacity: f64) -> Result<Self> {
        let params = Self {
            molar_masses,
            friction,
            heat_capacity,
            kappa0: 1.0,
            kappa2: 1.0,
            lambda: 0.0,
            theta0: 1.0,
            epsilon: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// Mixture whose off-diagonal friction coefficients all equal `b`.
    pub fn uniform(molar_masses: Vec<f64>, b: f64, heat_capacity: f64) -> Result<Self> {
        let n = molar_masses.len();
        let friction = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { b });
        Self::new(molar_masses, friction, heat_capacity)
    }

    pub fn with_conductivity(mut self, kappa0: f64, kappa2: f64) -> Result<Self> {
        self.kappa0 = kappa0;
        self.kappa2 = kappa2;
        self.validate()?;
        Ok(self)
    }

    pub fn with_boundary(mut self, lambda: f64, theta0: f64) -> Result<Self> {
        self.lambda = lambda;
        self.theta0 = theta0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    /// Number of species `n`.
    pub fn species(&self) -> usize {
        self.molar_masses.len()
    }

    /// Checks the structural assumptions on the coefficients.
    ///
    /// Messages name the violated assumption: A3 for the friction matrix and A4 for
    /// the conductivity law.
    pub fn validate(&self) -> Result<()> {
        let n = self.species();
        if n < 2 {
            return Err(Error::InvalidParameter(format!("a mixture needs at least two species, got {n}")));
        }
        if let Some((i, m)) = self.molar_masses.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidParameter(format!("molar mass m_{} = {m} must be positive and finite", i + 1)));
        }
        if self.friction.nrows() != n || self.friction.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "friction matrix is {}x{}, expected {n}x{n}",
                self.friction.nrows(),
                self.friction.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let bij = self.friction[(i, j)];
                if !(bij.is_finite() && bij > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "assumption A3 violated: b_{}{} = {bij} must be positive (b_ij = b_ji > 0)",
                        i + 1,
                        j + 1
                    )));
                }
                if bij != self.friction[(j, i)] {
                    return Err(Error::InvalidParameter(format!(
                        "assumption A3 violated: b_{}{} = {bij} differs from b_{}{} = {} (b_ij = b_ji > 0)",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1,
                        self.friction[(j, i)]
                    )));
                }
            }
        }
        if !(self.heat_capacity.is_finite() && self.heat_capacity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "heat capacity c_w = {} must be positive",
                self.heat_capacity
            )));
        }
        if !(self.kappa0.is_finite() && self.kappa0 > 0.0 && self.kappa2.is_finite() && self.kappa2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "assumption A4 violated: conductivity coefficients kappa0 = {}, kappa2 = {} must be positive \
                 so that c(1 + theta^2) <= kappa(theta) <= C(1 + theta^2)",
                self.kappa0, self.kappa2
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "boundary constant lambda = {} must be nonnegative",
                self.lambda
            )));
        }
        if !(self.theta0.is_finite() && self.theta0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "background temperature theta0 = {} must be positive",
                self.theta0
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization epsilon = {} must be nonnegative",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Heat conductivity `kappa(theta)`.
    pub fn conductivity(&self, theta: f64) -> f64 {
        self.kappa0 + self.kappa2 * theta * theta
    }

    /// Constants `(c, C)` with `c (1 + theta^2) <= kappa(theta) <= C (1 + theta^2)`.
    pub fn conductivity_bounds(&self) -> (f64, f64) {
        (self.kappa0.min(self.kappa2), self.kappa0.max(self.kappa2))
    }
}

/// Partial densities and temperature at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub rho: Vec<f64>,
    pub theta: f64,
}

impl LocalState {
    pub fn new(rho: Vec<f64>, theta: f64) -> Self {
        Self { rho, theta }
    }

    pub fn total_density(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// Strict positivity of all densities and of the temperature.
    pub fn validate(&self) -> Result<()> {
        if let Some((i, r)) = self.rho.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidState(format!("rho_{} = {r} is not positive", i + 1)));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::InvalidState(format!("theta = {} is not positive", self.theta)));
        }
        Ok(())
    }
}

/// Relative entropy variables `(w_1, ..., w_{n-1})` and `w = log theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEntropyVars {
    pub w: Vec<f64>,
    pub wlog: f64,
}

/// Chemical potentials `mu_i = (theta/m_i) log(rho_i/m_i) - c_w theta (log theta - 1)`.
pub fn chemical_potential(p: &MixtureParams, s: &LocalState) -> Vec<f64> {
    let log_theta = s.theta.ln();
    s.rho
        .iter()
        .zip(&p.molar_masses)
        .map(|(&r, &m)| s.theta / m * (r / m).ln() - p.heat_capacity * s.theta * (log_theta - 1.0))
        .collect()
}

/// Thermo-chemical potentials `q_i = mu_i / theta`.
pub fn thermo_potentials(p: &MixtureParams, s: &LocalState) -> Vec<f64> {
    let shift = p.heat_capacity * (s.theta.ln() - 1.0);
    s.rho.iter().zip(&p.molar_masses).map(|(&r, &m)| (r / m).ln() / m - shift).collect()
}

/// Mathematical entropy density `h`, the negative of the physical entropy.
pub fn entropy_density(p: &MixtureParams, s: &LocalState) -> f64 {
    let species: f64 = s.rho.iter().zip(&p.molar_masses).map(|(&r, &m)| r / m * ((r / m).ln() - 1.0)).sum();
    species - p.heat_capacity * s.total_density() * s.theta.ln()
}

/// Internal energy density `E = c_w rho theta`.
pub fn internal_energy(p: &MixtureParams, s: &LocalState) -> f64 {
    p.heat_capacity * s.total_density() * s.theta
}

/// Partial pressures `p_i = rho_i theta / m_i`.
pub fn partial_pressure(p: &MixtureParams, s: &LocalState) -> Vec<f64> {
    s.rho.iter().zip(&p.molar_masses).map(|(&r, &m)| r * s.theta / m).collect()
}

pub fn total_pressure(p: &MixtureParams, s: &LocalState) -> f64 {
    partial_pressure(p, s).iter().sum()
}

/// Driving forces `d_i = grad(rho_i theta) / m_i` from the gradients of `rho_i theta`.
///
/// Their sum is the pressure gradient.
pub fn driving_force(p: &MixtureParams, grad_rho_theta: &[f64]) -> Vec<f64> {
    grad_rho_theta.iter().zip(&p.molar_masses).map(|(&g, &m)| g / m).collect()
}

/// Partial Helmholtz free energies `psi_i`; diagnostic use only.
///
/// The thermal part is split in proportion to `rho_i`, so that `sum_i psi_i` is the
/// mixture free energy, `rho_i e_i = c_w rho_i theta` sums to `E`, and the Gibbs-Duhem
/// relation `p_i = rho_i mu_i - psi_i` holds species by species.
pub fn free_energy(p: &MixtureParams, s: &LocalState) -> Vec<f64> {
    let thermal = p.heat_capacity * s.theta * (s.theta.ln() - 1.0);
    s.rho.iter().zip(&p.molar_masses).map(|(&r, &m)| s.theta * r / m * ((r / m).ln() - 1.0) - thermal * r).collect()
}

pub fn entropy_vars_from_state(p: &MixtureParams, s: &LocalState) -> LocalEntropyVars {
    let n = p.species();
    let mn = p.molar_masses[n - 1];
    let last = (s.rho[n - 1] / mn).ln() / mn;
    let w = (0..n - 1)
        .map(|i| {
            let m = p.molar_masses[i];
            (s.rho[i] / m).ln() / m - last
        })
        .collect();
    LocalEntropyVars { w, wlog: s.theta.ln() }
}

const INVERSION_MAX_ITER: usize = 200;

/// Recovers the unique positive state with total density `rho_total` from entropy
/// variables.
///
/// With `t = rho_n` the densities are `rho_i = m_i exp(m_i w_i) (t/m_n)^(m_i/m_n)` and
/// `t` solves `t + sum_{i<n} rho_i(t) = rho_total`. The logarithm of the left side is
/// increasing and convex in `z = log t`, so Newton started from the right of the root
/// decreases monotonically to it; a bisection bracket guards against rounding.
pub fn state_from_entropy_vars(p: &MixtureParams, v: &LocalEntropyVars, rho_total: f64) -> Result<LocalState> {
    let n = p.species();
    if !(rho_total.is_finite() && rho_total > 0.0) {
        return Err(Error::InvalidState(format!("total density {rho_total} must be positive")));
    }
    if v.w.len() != n - 1 {
        return Err(Error::InvalidState(format!("expected {} entropy variables, got {}", n - 1, v.w.len())));
    }
    if !v.wlog.is_finite() || v.w.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidState("entropy variables must be finite".into()));
    }
    let m = &p.molar_masses;
    let mn = m[n - 1];
    let log_mn = mn.ln();
    // log rho_i = log m_i + m_i w_i + (m_i/m_n)(z - log m_n)
    let offsets: Vec<f64> = (0..n - 1).map(|i| m[i].ln() + m[i] * v.w[i]).collect();
    let ratios: Vec<f64> = (0..n - 1).map(|i| m[i] / mn).collect();

    // F(z) = log(sum_i rho_i(z)) - log rho_total is a log-sum-exp of affine functions
    // of z: convex, increasing, with slope between min and max of the mass ratios.
    let log_total = rho_total.ln();
    let exponent = |i: usize, z: f64| -> f64 {
        if i == n - 1 {
            z
        } else {
            offsets[i] + ratios[i] * (z - log_mn)
        }
    };
    let slope = |i: usize| -> f64 {
        if i == n - 1 {
            1.0
        } else {
            ratios[i]
        }
    };
    let eval = |z: f64| -> (f64, f64) {
        let top = (0..n).map(|i| exponent(i, z)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for i in 0..n {
            let e = (exponent(i, z) - top).exp();
            sum += e;
            weighted += slope(i) * e;
        }
        (top + sum.ln() - log_total, weighted / sum)
    };
    // z at which species i alone carries density `c`
    let level = |i: usize, log_c: f64| -> f64 {
        if i == n - 1 {
            log_c
        } else {
            log_mn + (log_c - offsets[i]) / ratios[i]
        }
    };
    // every species is below rho_total at the root, and at least one is above rho_total / n
    let mut hi = (0..n).map(|i| level(i, log_total)).fold(f64::INFINITY, f64::min);
    let mut lo = (0..n).map(|i| level(i, log_total - (n as f64).ln())).fold(f64::INFINITY, f64::min);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InversionFailed { iterations: 0, residual: f64::NAN });
    }

    let tol = 2.0 * f64::EPSILON;
    let mut z = hi;
    let mut last = f64::INFINITY;
    for iter in 0..INVERSION_MAX_ITER {
        let (g, dg) = eval(z);
        last = g;
        if g.abs() <= tol {
            return Ok(assemble_state(p, &offsets, &ratios, z, log_mn, v.wlog));
        }
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let newton = z - g / dg;
        z = if newton >= lo && newton <= hi && dg > 0.0 && newton != z { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            let (g, _) = eval(z);
            if g.abs() <= 1e-13 {
                return Ok(assemble_state(p, &offsets, &ratios, z, log_mn, v.wlog));
            }
            return Err(Error::InversionFailed { iterations: iter + 1, residual: g });
        }
    }
    Err(Error::InversionFailed { iterations: INVERSION_MAX_ITER, residual: last })
}

fn assemble_state(p: &MixtureParams, offsets: &[f64], ratios: &[f64], z: f64, log_mn: f64, wlog: f64) -> LocalState {
    let n = p.species();
    let mut rho = Vec::with_capacity(n);
    for i in 0..n - 1 {
        rho.push((offsets[i] + ratios[i] * (z - log_mn)).exp());
    }
    rho.push(z.exp());
    LocalState { rho, theta: wlog.exp() }
}

/// Jacobian `d rho' / d w` (size `(n-1) x (n-1)`) at fixed total density.
///
/// It is the inverse of the density block `R_ij = delta_ij/(m_i rho_i) + 1/(m_n rho_n)`
/// of the entropy Hessian, evaluated in closed form:
/// `diag(d) - d d^T / (m_n rho_n + sum_i d_i)` with `d_i = m_i rho_i`.
pub fn density_sensitivity(p: &MixtureParams, s: &LocalState) -> Result<DMatrix<f64>> {
    let n = p.species();
    let m = &p.molar_masses;
    let d: Vec<f64> = (0..n - 1).map(|i| m[i] * s.rho[i]).collect();
    let denom = m[n - 1] * s.rho[n - 1] + d.iter().sum::<f64>();
    if !(denom > 0.0 && denom.is_finite()) || d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidState(format!("density sensitivity needs positive densities, got {:?}", s.rho)));
    }
    Ok(DMatrix::from_fn(n - 1, n - 1, |i, j| {
        if i == j {
            // d_i (denom - d_i) / denom, with the difference summed from positive terms
            let rest =
                m[n - 1] * s.rho[n - 1] + d.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).sum::<f64>();
            d[i] * rest / denom
        } else {
            -d[i] * d[j] / denom
        }
    }))
}

/// Hessian of `h` in the reduced variables `(rho_1, ..., rho_{n-1}, theta)` at fixed
/// total density.
pub fn entropy_hessian(p: &MixtureParams, s: &LocalState) -> DMatrix<f64> {
    let n = p.species();
    let m = &p.molar_masses;
    let tail = 1.0 / (m[n - 1] * s.rho[n - 1]);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            hess[(i, j)] = tail;
        }
        hess[(i, i)] += 1.0 / (m[i] * s.rho[i]);
    }
    hess[(n - 1, n - 1)] = p.heat_capacity * s.total_density() / (s.theta * s.theta);
    hess
}

/// Pointwise relative entropy of `s` with respect to `r`.
///
/// This is the Bregman divergence of `h` in the conserved variables
/// `(rho_1, ..., rho_n, E)`:
/// `sum_i (rho_i log(rho_i/r_i) - (rho_i - r_i))/m_i + c_w rho f(theta/r_theta)` with
/// `f(s) = s - 1 - log s`.
pub fn relative_entropy_density(p: &MixtureParams, s: &LocalState, r: &LocalState) -> f64 {
    let species: f64 =
        s.rho.iter().zip(&r.rho).zip(&p.molar_masses).map(|((&a, &b), &m)| (a * (a / b).ln() - (a - b)) / m).sum();
    let ratio = s.theta / r.theta;
    species + p.heat_capacity * s.total_density() * (ratio - 1.0 - ratio.ln())
}
