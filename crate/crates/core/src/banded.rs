//! Banded storage and Cholesky factorization for the per-step SPD systems.
//!
//! The unknowns are ordered cell-major (`index = m N + i`), so the
//! fourth-order regularization couples cells `m ± 2` and the half-bandwidth
//! is `3N - 1`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandedError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("relative residual {achieved:e} above target {target:e}")]
    ResidualNotMet { achieved: f64, target: f64 },
    #[error("right-hand side has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Square matrix with entries only for `|i - j| ≤ half_bandwidth`; both
/// triangles are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self {
            n,
            p: half_bandwidth,
            data: vec![0.0; n * (2 * half_bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.p
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.p, "({i}, {j}) outside the band");
        i * (2 * self.p + 1) + (j + self.p - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.p {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Panics if `(i, j)` lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(i.abs_diff(j) <= self.p, "({i}, {j}) outside the band");
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.p);
                let hi = (i + self.p).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// `max |S_ij - S_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..=(i + self.p).min(self.n.saturating_sub(1)) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `S = L Lᵀ` using the lower triangle.
    pub fn cholesky(&self) -> Result<BandedCholesky, BandedError> {
        let n = self.n;
        let p = self.p;
        let w = p + 1;
        // l[i * w + (j + p - i)] = L_ij for i - p ≤ j ≤ i
        let mut l = vec![0.0; n * w];
        for j in 0..n {
            let lo = j.saturating_sub(p);
            let mut diag = self.get(j, j);
            for k in lo..j {
                let ljk = l[j * w + (k + p - j)];
                diag -= ljk * ljk;
            }
            if !(diag > 0.0) {
                return Err(BandedError::NotPositiveDefinite { row: j, pivot: diag });
            }
            let ljj = diag.sqrt();
            l[j * w + p] = ljj;
            for i in j + 1..(j + p + 1).min(n) {
                let lo_i = i.saturating_sub(p).max(lo);
                let mut acc = self.get(i, j);
                for k in lo_i..j {
                    acc -= l[i * w + (k + p - i)] * l[j * w + (k + p - j)];
                }
                l[i * w + (j + p - i)] = acc / ljj;
            }
        }
        Ok(BandedCholesky { n, p, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    p: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(p);
            let mut acc = y[i];
            for k in lo..i {
                acc -= self.l[i * w + (k + p - i)] * y[k];
            }
            y[i] = acc / self.l[i * w + p];
        }
        for i in (0..n).rev() {
            let hi = (i + p).min(n - 1);
            let mut acc = y[i];
            for k in i + 1..=hi {
                acc -= self.l[k * w + (i + p - k)] * y[k];
            }
            y[i] = acc / self.l[i * w + p];
        }
        y
    }
}

/// Solution of an SPD banded system with its relative residual
/// `‖S x - b‖₂ / ‖b‖₂`.
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub refinements: usize,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cholesky solve followed by up to three steps of iterative refinement.
pub fn solve_spd(
    matrix: &BandedMatrix,
    rhs: &[f64],
    target: f64,
) -> Result<SpdSolution, BandedError> {
    if rhs.len() != matrix.dim() {
        return Err(BandedError::DimensionMismatch {
            expected: matrix.dim(),
            found: rhs.len(),
        });
    }
    let factor = matrix.cholesky()?;
    let b_norm = norm2(rhs);
    if b_norm == 0.0 {
        return Ok(SpdSolution {
            x: vec![0.0; rhs.len()],
            relative_residual: 0.0,
            refinements: 0,
        });
    }
    let mut x = factor.solve(rhs);
    let residual_of = |x: &[f64]| -> Vec<f64> {
        matrix
            .matvec(x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| b - ax)
            .collect()
    };
    let mut r = residual_of(&x);
    let mut rel = norm2(&r) / b_norm;
    let mut refinements = 0;
    while rel > target && refinements < 3 {
        let dx = factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        r = residual_of(&x);
        rel = norm2(&r) / b_norm;
        refinements += 1;
    }
    if !(rel <= target) {
        return Err(BandedError::ResidualNotMet {
            achieved: rel,
            target,
        });
    }
    Ok(SpdSolution {
        x,
        relative_residual: rel,
        refinements,
    })
}
