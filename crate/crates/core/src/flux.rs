//! Face fluxes of the finite-volume scheme.
//!
//! At an interior face the Onsager matrix is rebuilt at averaged densities and at the
//! face temperature of [`face_temperature`], and applied to the face gradients of the
//! entropy variables `(q_1, ..., q_n, -1/theta)`. Testing the discrete balances with
//! the entropy variables then reproduces the continuous entropy identity face by face:
//! the entropy production at a face is `zeta^T A zeta + kappa |grad log theta|^2 >= 0`.

use crate::constitutive::{thermo_potentials, LocalState, MixtureParams};
use crate::error::Result;
use crate::grid::{apply_boundary, face_temperature, FaceAverage, Grid};
use crate::msalgebra::MsLocal;

/// Fluxes on all `N + 1` faces, oriented in `+x`.
#[derive(Debug, Clone)]
pub struct FaceFluxes {
    /// `mass[f][i]`, zero on boundary faces.
    pub mass: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// Per-face Fourier dissipation density `kappa |grad log theta|^2`, if requested.
    pub fourier: Vec<f64>,
    /// Per-face friction dissipation density `1/2 sum b_ij rho_i rho_j |u_i - u_j|^2`.
    pub friction: Vec<f64>,
}

pub fn assemble(
    p: &MixtureParams,
    grid: &Grid,
    average: FaceAverage,
    states: &[LocalState],
    with_dissipation: bool,
) -> Result<FaceFluxes> {
    let n = p.species();
    let cells = grid.cells();
    let dx = grid.dx();
    let faces = grid.faces();
    let q: Vec<Vec<f64>> = states.iter().map(|s| thermo_potentials(p, s)).collect();

    let mut mass = vec![vec![0.0; n]; faces];
    let mut energy = vec![0.0; faces];
    let (mut fourier, mut friction) =
        if with_dissipation { (vec![0.0; faces], vec![0.0; faces]) } else { (Vec::new(), Vec::new()) };

    let mut rho_face = vec![0.0; n];
    let mut grad_q = vec![0.0; n];
    for f in 1..cells {
        let (l, r) = (&states[f - 1], &states[f]);
        for i in 0..n {
            rho_face[i] = average.apply(l.rho[i], r.rho[i]);
            grad_q[i] = (q[f][i] - q[f - 1][i]) / dx;
        }
        let theta_face = face_temperature(l.theta, r.theta);
        let kappa = p.conductivity(theta_face);
        let local = MsLocal::assemble_with_conductivity(p, &rho_face, theta_face, kappa)?;
        let grad_minus_inv_theta = (1.0 / l.theta - 1.0 / r.theta) / dx;
        let (jm, je) = local.fluxes(&grad_q, grad_minus_inv_theta);
        if with_dissipation {
            let glog = (r.theta.ln() - l.theta.ln()) / dx;
            fourier[f] = kappa * glog * glog;
            friction[f] = friction_dissipation(p, &rho_face, &jm);
        }
        mass[f] = jm;
        energy[f] = je;
    }
    let (left, right) = apply_boundary(p, states[0].theta, states[cells - 1].theta);
    energy[0] = left;
    energy[cells] = right;
    Ok(FaceFluxes { mass, energy, fourier, friction })
}

/// `1/2 sum_ij b_ij rho_i rho_j |u_i - u_j|^2` with `u_i = J_i / rho_i`.
pub fn friction_dissipation(p: &MixtureParams, rho: &[f64], mass_flux: &[f64]) -> f64 {
    let n = rho.len();
    let u: Vec<f64> = mass_flux.iter().zip(rho).map(|(j, r)| j / r).collect();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let du = u[i] - u[j];
            acc += p.friction[(i, j)] * rho[i] * rho[j] * du * du;
        }
    }
    acc
}

/// Entropy flux leaving through the boundary per unit time,
/// `F_N / theta_{N-1} - F_0 / theta_0`.
pub fn boundary_entropy_flux(fluxes: &FaceFluxes, states: &[LocalState]) -> f64 {
    let last = fluxes.energy.len() - 1;
    fluxes.energy[last] / states[states.len() - 1].theta - fluxes.energy[0] / states[0].theta
}
