//! Cell-centered finite volumes on an interval `[0, length]`.
//!
//! Cell `k` spans `[k dx, (k+1) dx]`; face `k` sits at `k dx`, so faces `0` and `N` are
//! the boundary.

use crate::constitutive::MixtureParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    cells: usize,
    length: f64,
}

impl Grid {
    pub fn new(cells: usize, length: f64) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("domain length {length} must be positive")));
        }
        Ok(Self { cells, length })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn faces(&self) -> usize {
        self.cells + 1
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.cells).map(|k| (k as f64 + 0.5) * dx).collect()
    }

    pub fn face_positions(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..=self.cells).map(|k| k as f64 * dx).collect()
    }

    /// Uniformly refined grid with `factor` children per cell.
    pub fn refined(&self, factor: usize) -> Self {
        Self { cells: self.cells * factor, length: self.length }
    }

    /// Face gradient of a cell field; boundary faces carry zero.
    pub fn face_gradient(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.cells);
        let dx = self.dx();
        let mut g = vec![0.0; self.faces()];
        for k in 1..self.cells {
            g[k] = (f[k] - f[k - 1]) / dx;
        }
        g
    }

    /// Cell divergence of a face field, `(F_{k+1} - F_k) / dx`.
    pub fn divergence(&self, flux: &[f64]) -> Vec<f64> {
        debug_assert_eq!(flux.len(), self.faces());
        let dx = self.dx();
        flux.windows(2).map(|w| (w[1] - w[0]) / dx).collect()
    }

    /// Discrete Laplacian with zero boundary gradients.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.divergence(&self.face_gradient(f))
    }

    /// Midpoint-rule integral of a cell field.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.dx()
    }

    /// Averages groups of `factor` consecutive cells.
    pub fn restrict(values: &[f64], factor: usize) -> Vec<f64> {
        values.chunks(factor).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }
}

/// How cell densities are combined into face densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    pub fn apply(self, left: f64, right: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (left + right),
            FaceAverage::Harmonic => 2.0 * left * right / (left + right),
        }
    }
}

/// Face temperature `theta_L theta_R (log theta_R - log theta_L) / (theta_R - theta_L)`.
///
/// With this choice `theta_f * grad(-1/theta) = grad(log theta)` holds exactly on the
/// grid, which makes the discrete Fourier dissipation equal `kappa |grad log theta|^2`.
pub fn face_temperature(left: f64, right: f64) -> f64 {
    let ratio = right / left;
    if (ratio - 1.0).abs() < 1e-4 {
        // log(1 + x) / x
        let x = ratio - 1.0;
        let log_over = 1.0 - x / 2.0 + x * x / 3.0 - x * x * x / 4.0 + x.powi(4) / 5.0;
        return right * log_over;
    }
    left * right * (right.ln() - left.ln()) / (right - left)
}

/// Boundary energy fluxes `(F_0, F_N)` in the `+x` direction.
///
/// The outward flux is `lambda (theta - theta_0)` on both ends, so a boundary cell hotter
/// than the background loses energy. Mass fluxes through the boundary are zero.
pub fn apply_boundary(p: &MixtureParams, theta_left: f64, theta_right: f64) -> (f64, f64) {
    (-p.lambda * (theta_left - p.theta0), p.lambda * (theta_right - p.theta0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_stencils() {
        let g = Grid::new(2, 1.0).unwrap();
        assert_eq!(g.face_gradient(&[0.0, 1.0]), vec![0.0, 2.0, 0.0]);
        let g = Grid::new(5, 2.0).unwrap();
        assert!(g.face_gradient(&[3.0; 5]).iter().all(|v| *v == 0.0));
        let lin: Vec<f64> = (0..5).map(|k| k as f64 * g.dx()).collect();
        let grad = g.face_gradient(&lin);
        assert!(grad[1..5].iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn divergence_telescopes() {
        let g = Grid::new(1, 0.5).unwrap();
        assert_eq!(g.divergence(&[1.0, 2.0]), vec![2.0]);
        let g = Grid::new(7, 1.3).unwrap();
        assert!(g.divergence(&[4.0; 8]).iter().all(|v| *v == 0.0));
        let flux: Vec<f64> = (0..8).map(|k| ((k * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let total = g.integrate(&g.divergence(&flux));
        assert!((total - (flux[7] - flux[0])).abs() < 1e-14);
    }

    #[test]
    fn boundary_fluxes() {
        let p = MixtureParams::uniform(vec![1.0, 1.0], 1.0, 1.0).unwrap();
        assert_eq!(apply_boundary(&p, 3.0, 0.2), (0.0, 0.0));
        let p = p.with_boundary(1.0, 1.0).unwrap();
        assert_eq!(apply_boundary(&p, 1.0, 1.0), (0.0, 0.0));
        // hot cell at either end: energy leaves through the boundary
        let (left, right) = apply_boundary(&p, 2.0, 2.0);
        assert_eq!((left, right), (-1.0, 1.0));
    }

    #[test]
    fn face_temperature_is_consistent_mean() {
        for (a, b) in [(0.5, 2.0), (3.0, 1.0), (1.0, 1.0002), (7.0, 7.1)] {
            let t = face_temperature(a, b);
            assert!(t > a.min(b) && t < a.max(b));
            let identity = t * (1.0 / a - 1.0 / b) - (b.ln() - a.ln());
            assert!(identity.abs() < 1e-12 * (b.ln() - a.ln()).abs(), "{a} {b}");
        }
        // near-equal temperatures: the mean sits within O(x^2) of the geometric mean
        for (a, b) in [(1.0, 1.0 + 1e-6), (1.0, 1.00009), (2.0, 2.0 * (1.0 - 5e-5))] {
            let t = face_temperature(a, b);
            let x: f64 = b / a - 1.0;
            assert!((t / (a * b).sqrt() - 1.0).abs() < x * x);
        }
        assert!((face_temperature(2.0, 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0, 1.0).is_err());
        assert!(Grid::new(3, -1.0).is_err());
    }
}
