//! Banded LU factorization with partial pivoting, LAPACK `gbtrf` layout.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage keeps `kl` extra super-diagonals for the fill-in produced by row exchanges.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self { n, kl, ku, ld, data: vec![0.0; ld * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ld
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Sets an entry inside the band; entries outside are ignored.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if self.in_band(i, j) {
            let k = self.idx(i, j);
            self.data[k] = v;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Factorizes in place.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let threshold = 1e-300f64.max(scale * 1e-15 * f64::EPSILON);
        let mut pivots = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.data[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.data[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            pivots[j] = j + p;
            if !(best > threshold) {
                return Err(Error::Singular { pivot: best, threshold });
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.data.swap(a, b);
                }
            }
            let diag = self.data[self.idx(j, j)];
            for r in 1..=km {
                let k = self.idx(j + r, j);
                self.data[k] /= diag;
            }
            for c in j + 1..=ju {
                let ujc = self.data[self.idx(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                for r in 1..=km {
                    let l = self.data[self.idx(j + r, j)];
                    let k = self.idx(j + r, c);
                    self.data[k] -= l * ujc;
                }
            }
        }
        Ok(BandedLu { m: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let mut x = rhs.to_vec();
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap(j, p);
            }
            let km = m.kl.min(n - 1 - j);
            for r in 1..=km {
                x[j + r] -= m.data[m.idx(j + r, j)] * x[j];
            }
        }
        let width = m.kl + m.ku;
        for j in (0..n).rev() {
            x[j] /= m.data[m.idx(j, j)];
            let xj = x[j];
            for i in j.saturating_sub(width)..j {
                x[i] -= m.data[m.idx(i, j)] * xj;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(rng: &mut ChaCha8Rng, n: usize, kl: usize, ku: usize) -> (BandedMatrix, DMatrix<f64>) {
        let mut b = BandedMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if b.in_band(i, j) {
                    // weak diagonal so that pivoting is exercised
                    let v = rng.random_range(-1.0..1.0) * if i == j { 0.05 } else { 1.0 };
                    b.set(i, j, v);
                    d[(i, j)] = v;
                }
            }
        }
        (b, d)
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (12, 3, 2), (30, 5, 5), (9, 8, 8), (20, 0, 3)] {
            let (b, d) = random_banded(&mut rng, n, kl, ku);
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = d.clone().lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
            let x = b.clone().factorize().unwrap().solve(&rhs);
            let scale = dense.amax().max(1.0);
            for i in 0..n {
                assert!((x[i] - dense[i]).abs() < 1e-9 * scale, "n={n} kl={kl} ku={ku}");
            }
            let back = b.matvec(&x);
            for i in 0..n {
                assert!((back[i] - rhs[i]).abs() < 1e-9 * scale);
            }
        }
    }

    #[test]
    fn reports_singular() {
        let mut b = BandedMatrix::zeros(3, 1, 1);
        b.set(0, 0, 1.0);
        b.set(1, 1, 1.0);
        assert!(b.factorize().is_err());
    }
}
