//! Pointwise Maxwell-Stefan algebra.
//!
//! The friction system `-theta sqrt(rho_i) sum_j M_ij sqrt(rho_j) u_j = d_i` has the
//! singular matrix `M` with kernel `span{sqrt(rho)}`. It is inverted on
//! `L = {y : sqrt(rho) . y = 0}` through the Bott-Duffin inverse
//! `M_BD = P_L (M P_L + P_perp)^{-1}`, and the resulting fluxes are written as an
//! Onsager matrix acting on gradients of `(mu/theta, -1/theta)`.

use nalgebra::{DMatrix, DVector};

use crate::constitutive::{LocalState, MixtureParams};
use crate::error::{Error, Result};

/// Friction matrix `M(rho)`: `M_ii = sum_{k != i} b_ik rho_k`, `M_ij = -b_ij sqrt(rho_i rho_j)`.
pub fn build_friction_matrix(p: &MixtureParams, rho: &[f64]) -> DMatrix<f64> {
    let n = rho.len();
    let sqrt: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (0..n).filter(|&k| k != i).map(|k| p.friction[(i, k)] * rho[k]).sum()
        } else {
            -p.friction[(i, j)] * sqrt[i] * sqrt[j]
        }
    })
}

/// Orthogonal projections `(P_L, P_perp)` onto `L` and onto `span{sqrt(rho)}`.
pub fn projections(rho: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rho.len();
    let total: f64 = rho.iter().sum();
    let perp = DMatrix::from_fn(n, n, |i, j| (rho[i] * rho[j]).sqrt() / total);
    let proj = DMatrix::identity(n, n) - &perp;
    (proj, perp)
}

/// Bott-Duffin inverse `P_L (M P_L + P_perp)^{-1}` by a partially pivoted LU solve.
///
/// Fails when a pivot drops below `1e-14 * |M|`, which only happens for degenerate
/// densities such as an all-zero vector.
pub fn bott_duffin(m: &DMatrix<f64>, proj: &DMatrix<f64>, perp: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let system = m * proj + perp;
    let lu = system.lu();
    let threshold = 1e-14 * m.norm().max(f64::MIN_POSITIVE);
    let pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |acc, d| acc.min(d.abs()));
    if !(pivot > threshold) {
        return Err(Error::Singular { pivot, threshold });
    }
    let inv = lu.solve(&DMatrix::identity(n, n)).ok_or(Error::Singular { pivot, threshold })?;
    Ok(proj * inv)
}

/// Coercivity constant of `M` on `L` at unit total density: `min_{i != j} b_ij`.
///
/// `M` is linear in the densities while the projections are scale invariant, so at
/// total density `rho` the bound reads `z^T M z >= rho min b_ij |P_L z|^2`.
pub fn friction_coercivity(p: &MixtureParams) -> f64 {
    let n = p.species();
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                min = min.min(p.friction[(i, j)]);
            }
        }
    }
    min
}

/// Coercivity constant of `M_BD` on `L` at unit total density:
/// `(2 sum_{i != j} (b_ij + 1))^{-1}`. At total density `rho` it is divided by `rho`.
pub fn bott_duffin_coercivity(p: &MixtureParams) -> f64 {
    let n = p.species();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += p.friction[(i, j)] + 1.0;
            }
        }
    }
    1.0 / (2.0 * sum)
}

/// Per-point algebra bundle feeding flux assembly.
#[derive(Debug, Clone)]
pub struct MsLocal {
    pub rho: Vec<f64>,
    pub theta: f64,
    pub kappa: f64,
    pub friction: DMatrix<f64>,
    pub proj: DMatrix<f64>,
    pub proj_perp: DMatrix<f64>,
    /// Symmetric part of the Bott-Duffin inverse; the raw inverse is symmetric up to
    /// rounding.
    pub bd_inverse: DMatrix<f64>,
    /// `A_ij = M_BD_ij sqrt(rho_i rho_j)`.
    pub a: DMatrix<f64>,
    /// `B_i = theta sum_j A_ij / m_j`.
    pub b: DVector<f64>,
    /// `theta^2 (kappa + sum_ij A_ij / (m_i m_j))`.
    pub a_energy: f64,
    inv_mass: Vec<f64>,
}

impl MsLocal {
    /// Assembles `M`, the projections, `M_BD` and the Onsager coefficients at `(rho, theta)`.
    pub fn assemble(p: &MixtureParams, rho: &[f64], theta: f64) -> Result<Self> {
        Self::assemble_with_conductivity(p, rho, theta, p.conductivity(theta))
    }

    pub fn assemble_with_conductivity(p: &MixtureParams, rho: &[f64], theta: f64, kappa: f64) -> Result<Self> {
        let n = rho.len();
        if n != p.species() {
            return Err(Error::InvalidState(format!("expected {} densities, got {n}", p.species())));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !(rho.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidState(format!("densities {rho:?} must be nonnegative with positive sum")));
        }
        let friction = build_friction_matrix(p, rho);
        let (proj, proj_perp) = projections(rho);
        let raw = bott_duffin(&friction, &proj, &proj_perp)?;
        let bd_inverse = (&raw + raw.transpose()) * 0.5;
        let sqrt: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
        let a = DMatrix::from_fn(n, n, |i, j| bd_inverse[(i, j)] * sqrt[i] * sqrt[j]);
        let inv_mass: Vec<f64> = p.molar_masses.iter().map(|m| 1.0 / m).collect();
        let inv_m = DVector::from_column_slice(&inv_mass);
        let b = (&a * &inv_m) * theta;
        let cross = inv_m.dot(&(&a * &inv_m));
        let a_energy = theta * theta * (kappa + cross);
        Ok(Self { rho: rho.to_vec(), theta, kappa, friction, proj, proj_perp, bd_inverse, a, b, a_energy, inv_mass })
    }

    pub fn species(&self) -> usize {
        self.rho.len()
    }

    /// Full `(n+1) x (n+1)` Onsager matrix `[[A, B], [B^T, a]]`.
    pub fn onsager_matrix(&self) -> DMatrix<f64> {
        let n = self.species();
        let mut q = DMatrix::zeros(n + 1, n + 1);
        q.view_mut((0, 0), (n, n)).copy_from(&self.a);
        for i in 0..n {
            q[(i, n)] = self.b[i];
            q[(n, i)] = self.b[i];
        }
        q[(n, n)] = self.a_energy;
        q
    }

    /// Fluxes `(J, J_e) = -Q (grad q, grad(-1/theta))`.
    pub fn fluxes(&self, grad_q: &[f64], grad_minus_inv_theta: f64) -> (Vec<f64>, f64) {
        let n = self.species();
        let mut mass = vec![0.0; n];
        for (i, ji) in mass.iter_mut().enumerate() {
            let mut acc = self.b[i] * grad_minus_inv_theta;
            for j in 0..n {
                acc += self.a[(i, j)] * grad_q[j];
            }
            *ji = -acc;
        }
        let mut energy = self.a_energy * grad_minus_inv_theta;
        for j in 0..n {
            energy += self.b[j] * grad_q[j];
        }
        (mass, -energy)
    }

    /// Velocities `u_i = -(1/sqrt(rho_i)) sum_j M_BD_ij d_j / (theta sqrt(rho_j))`.
    pub fn velocities(&self, d: &[f64]) -> Vec<f64> {
        let y = self.scaled_forces(d);
        let v = &self.bd_inverse * y;
        v.iter().zip(&self.rho).map(|(vi, r)| -vi / r.sqrt()).collect()
    }

    /// `y_j = d_j / (theta sqrt(rho_j))`.
    fn scaled_forces(&self, d: &[f64]) -> DVector<f64> {
        DVector::from_iterator(d.len(), d.iter().zip(&self.rho).map(|(dj, r)| dj / (self.theta * r.sqrt())))
    }

    /// Size of the component of the scaled forces outside `L`.
    ///
    /// It vanishes exactly when the driving forces sum to zero, i.e. when the pressure is
    /// uniform; the Bott-Duffin inverse silently discards this component.
    pub fn pressure_constraint_violation(&self, d: &[f64]) -> f64 {
        (&self.proj_perp * self.scaled_forces(d)).norm()
    }

    pub(crate) fn inv_mass(&self) -> &[f64] {
        &self.inv_mass
    }
}

/// Velocities from driving forces at `(rho, theta)`; they satisfy `sum_i rho_i u_i = 0`.
pub fn velocities(p: &MixtureParams, rho: &[f64], theta: f64, d: &[f64]) -> Result<Vec<f64>> {
    Ok(MsLocal::assemble(p, rho, theta)?.velocities(d))
}

/// Onsager coefficients `(A, B, a)` at `(rho, theta)`.
pub fn onsager(p: &MixtureParams, rho: &[f64], theta: f64) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let local = MsLocal::assemble(p, rho, theta)?;
    Ok((local.a, local.b, local.a_energy))
}

/// Spatial gradients of the primal variables at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradients {
    pub rho: Vec<f64>,
    pub theta: f64,
}

impl LocalGradients {
    /// `grad(rho_i theta)`.
    pub fn rho_theta(&self, s: &LocalState) -> Vec<f64> {
        self.rho.iter().zip(&s.rho).map(|(g, r)| g * s.theta + r * self.theta).collect()
    }

    /// `grad q_i = grad(rho_i)/(m_i rho_i) - c_w grad(theta)/theta`.
    pub fn thermo_potentials(&self, p: &MixtureParams, s: &LocalState) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&s.rho)
            .zip(&p.molar_masses)
            .map(|((g, r), m)| g / (m * r) - p.heat_capacity * self.theta / s.theta)
            .collect()
    }

    /// `grad(-1/theta) = grad(theta)/theta^2`.
    pub fn minus_inv_theta(&self, s: &LocalState) -> f64 {
        self.theta / (s.theta * s.theta)
    }

    /// `grad w_i` for the relative entropy variables, `i < n`.
    pub fn relative_entropy_vars(&self, p: &MixtureParams, s: &LocalState) -> Vec<f64> {
        let gq = self.thermo_potentials(p, s);
        let last = gq[gq.len() - 1];
        gq[..gq.len() - 1].iter().map(|g| g - last).collect()
    }

    /// `grad log theta`.
    pub fn log_theta(&self, s: &LocalState) -> f64 {
        self.theta / s.theta
    }
}

/// Mass fluxes in Onsager form `J_i = -sum_j A_ij grad q_j - B_i grad(-1/theta)`.
pub fn flux_mass(p: &MixtureParams, local: &MsLocal, s: &LocalState, g: &LocalGradients) -> Vec<f64> {
    local.fluxes(&g.thermo_potentials(p, s), g.minus_inv_theta(s)).0
}

/// Mass fluxes in relative entropy variables
/// `J_i = -sum_{j<n} A_ij grad w_j - (B_i/theta) grad log theta`.
pub fn flux_mass_reduced(p: &MixtureParams, local: &MsLocal, s: &LocalState, g: &LocalGradients) -> Vec<f64> {
    let gw = g.relative_entropy_vars(p, s);
    let glog = g.log_theta(s);
    let n = local.species();
    (0..n)
        .map(|i| {
            let mut acc = local.b[i] / local.theta * glog;
            for (j, gwj) in gw.iter().enumerate() {
                acc += local.a[(i, j)] * gwj;
            }
            -acc
        })
        .collect()
}

/// Mass fluxes `J_i = -sum_j A_ij grad(q_j + w/m_j)`.
pub fn flux_mass_combined(p: &MixtureParams, local: &MsLocal, s: &LocalState, g: &LocalGradients) -> Vec<f64> {
    let gq = g.thermo_potentials(p, s);
    let glog = g.log_theta(s);
    let n = local.species();
    let z: Vec<f64> = (0..n).map(|j| gq[j] + glog * local.inv_mass()[j]).collect();
    (0..n).map(|i| -(0..n).map(|j| local.a[(i, j)] * z[j]).sum::<f64>()).collect()
}

/// Mass fluxes from driving forces `J_i = -sqrt(rho_i) sum_j M_BD_ij d_j/(theta sqrt(rho_j))`.
pub fn flux_mass_direct(p: &MixtureParams, local: &MsLocal, s: &LocalState, g: &LocalGradients) -> Vec<f64> {
    let d = crate::constitutive::driving_force(p, &g.rho_theta(s));
    local.velocities(&d).iter().zip(&s.rho).map(|(u, r)| r * u).collect()
}

/// Energy flux `J_e = -kappa grad(theta) + theta sum_i rho_i u_i / m_i`.
pub fn flux_energy(p: &MixtureParams, s: &LocalState, grad_theta: f64, u: &[f64]) -> f64 {
    let convective: f64 = u.iter().zip(&s.rho).zip(&p.molar_masses).map(|((ui, r), m)| r * ui / m).sum();
    -p.conductivity(s.theta) * grad_theta + s.theta * convective
}

/// Energy flux in Onsager form `J_e = -sum_j B_j grad q_j - a grad(-1/theta)`.
pub fn flux_energy_onsager(p: &MixtureParams, local: &MsLocal, s: &LocalState, g: &LocalGradients) -> f64 {
    local.fluxes(&g.thermo_potentials(p, s), g.minus_inv_theta(s)).1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_species() -> MixtureParams {
        MixtureParams::uniform(vec![1.0, 1.0], 2.0, 1.0).unwrap()
    }

    fn close(a: &DMatrix<f64>, b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a} vs {b:?}");
        }
    }

    #[test]
    fn friction_matrix_two_species() {
        let m = build_friction_matrix(&two_species(), &[1.0, 4.0]);
        close(&m, &[8.0, -4.0, -4.0, 2.0], 1e-15);
        let kernel = &m * DVector::from_vec(vec![1.0, 2.0]);
        assert!(kernel.norm() < 1e-15);
        assert_eq!(m.rank(1e-12), 1);
    }

    #[test]
    fn projection_two_species() {
        let (pl, perp) = projections(&[1.0, 4.0]);
        close(&pl, &[0.8, -0.4, -0.4, 0.2], 1e-15);
        assert!((&pl * &pl - &pl).norm() < 1e-15);
        assert!((&pl + &perp - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn bott_duffin_two_species_closed_form() {
        // In 2x2, M = b rho P_L, hence M_BD = P_L / (b rho).
        let p = two_species();
        let local = MsLocal::assemble(&p, &[1.0, 4.0], 1.0).unwrap();
        close(&local.bd_inverse, &[0.08, -0.04, -0.04, 0.02], 1e-15);
        close(&local.a, &[0.08, -0.08, -0.08, 0.08], 1e-15);
        let u = local.velocities(&[1.0, -1.0]);
        assert!((u[0] + 0.10).abs() < 1e-15 && (u[1] - 0.025).abs() < 1e-15);
        assert!((u[0] + 4.0 * u[1]).abs() < 1e-15);
        assert_eq!(local.velocities(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn singular_for_degenerate_densities() {
        let p = MixtureParams::uniform(vec![1.0, 1.0, 1.0], 1.0, 1.0).unwrap();
        assert!(MsLocal::assemble(&p, &[0.0, 0.0, 0.0], 1.0).is_err());
        // a single vanishing species keeps the constrained system regular
        assert!(MsLocal::assemble(&p, &[1.0, 0.0, 0.0], 1.0).is_ok());
    }

    #[test]
    fn energy_flux_reference_values() {
        let p = two_species().with_conductivity(0.3, 0.4).unwrap();
        let s = LocalState::new(vec![1.0, 1.0], 1.0);
        assert!((flux_energy(&p, &s, 1.0, &[0.0, 0.0]) + 0.7).abs() < 1e-15);
        assert_eq!(flux_energy(&p, &s, 0.0, &[0.0, 0.0]), 0.0);
        // equal molar masses: convective term is (theta/m) sum rho_i u_i = 0
        let local = MsLocal::assemble(&p, &s.rho, s.theta).unwrap();
        let u = local.velocities(&[0.4, 0.1]);
        assert!((flux_energy(&p, &s, 0.2, &u) + p.conductivity(1.0) * 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_state_has_no_flux() {
        let p = MixtureParams::uniform(vec![1.0, 2.0, 3.0], 1.5, 1.0).unwrap();
        let s = LocalState::new(vec![0.3, 1.0, 2.0], 1.4);
        let local = MsLocal::assemble(&p, &s.rho, s.theta).unwrap();
        let g = LocalGradients { rho: vec![0.0; 3], theta: 0.0 };
        assert!(flux_mass(&p, &local, &s, &g).iter().all(|j| j.abs() < 1e-15));
        assert!(flux_energy_onsager(&p, &local, &s, &g).abs() < 1e-15);
    }
}
