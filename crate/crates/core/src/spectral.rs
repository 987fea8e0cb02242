//! Eigenvalue certification for the friction matrices.
//!
//! `σ(-A)` is obtained from the symmetric similar matrix `-A_S`, so only a
//! symmetric eigensolver is needed on the open simplex. On the boundary,
//! where `A_S` is undefined, `σ(A0)` falls back to a real Schur decomposition.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::mixture::{ConcVector, MixtureError, MixtureSpec};

/// Default zero-detection threshold relative to `Δ`.
pub const DEFAULT_ZERO_TOL_FACTOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("vector lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("eigenvalue has a nonzero imaginary part {0:e}")]
    ComplexEigenvalue(f64),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub zero_multiplicity: usize,
    /// Every nonzero eigenvalue lies in `[δ - tol, Δ)`.
    pub in_band: bool,
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub tol: f64,
    /// Largest nonzero eigenvalue sits within `tol` of the open edge `Δ`.
    pub borderline: bool,
}

impl SpectrumReport {
    /// Exactly one zero eigenvalue and the rest in band.
    pub fn certifies_friction(&self) -> bool {
        self.zero_multiplicity == 1 && self.in_band
    }

    /// No zero eigenvalue and all in band.
    pub fn certifies_reduced(&self) -> bool {
        self.zero_multiplicity == 0 && self.in_band
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StructureFlags {
    pub quasi_positive: bool,
    pub irreducible: bool,
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_spectrum(m: &DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    if m.nrows() != m.ncols() {
        return Err(SpectralError::NotSquare(m.nrows(), m.ncols()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-8 * m.amax().max(1.0) {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Eigenvalues of `x ⊗ y`: zero with multiplicity `n-1`, and `x·y`.
pub fn rank_one_spectrum(x: &[f64], y: &[f64]) -> Result<Vec<f64>, SpectralError> {
    if x.len() != y.len() {
        return Err(SpectralError::DimensionMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let mut eig = vec![0.0; x.len() - 1];
    eig.push(dot);
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Spectrum of `-A(c)` through `-A_S(c)`.
///
/// The eigenvalue closest to zero is identified as the kernel eigenvalue when
/// `‖A c‖_∞ ≤ tol`, which lets exact inputs be certified with `tol = 0`.
pub fn certify_a_spectrum(
    spec: &MixtureSpec,
    c: &ConcVector,
    tol: f64,
) -> Result<SpectrumReport, SpectralError> {
    let a_s = spec.a_sym(c)?;
    let eig = symmetric_spectrum(&(-a_s))?;
    let kernel_residual = (spec.a_matrix(c) * c.full()).amax();
    let kernel_index = if kernel_residual <= tol {
        eig.iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
    } else {
        None
    };
    Ok(build_report(spec, eig, kernel_index, tol))
}

/// Spectrum of `A0(c')`.
///
/// Strictly admissible states reuse `σ(A0) ∪ {0} = σ(-A_S)` and drop the
/// kernel eigenvalue; boundary states use a real Schur decomposition of `A0`.
pub fn certify_a0_spectrum(
    spec: &MixtureSpec,
    c: &ConcVector,
    tol: f64,
) -> Result<SpectrumReport, SpectralError> {
    let eig = if c.is_strictly_admissible(spec.admissibility_floor()) {
        let mut full = symmetric_spectrum(&(-spec.a_sym(c)?))?;
        let kernel = full
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .expect("at least three eigenvalues");
        full.remove(kernel);
        full
    } else {
        general_real_spectrum(&spec.a0(c), tol.max(1e-12) * spec.big_delta())?
    };
    Ok(build_report(spec, eig, None, tol))
}

/// Eigenvalues of a general real matrix whose spectrum is known to be real.
fn general_real_spectrum(m: &DMatrix<f64>, imag_tol: f64) -> Result<Vec<f64>, SpectralError> {
    let complex = m.complex_eigenvalues();
    let mut eig = Vec::with_capacity(complex.len());
    for z in complex.iter() {
        if z.im.abs() > imag_tol {
            return Err(SpectralError::ComplexEigenvalue(z.im));
        }
        eig.push(z.re);
    }
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

fn build_report(
    spec: &MixtureSpec,
    eigenvalues: Vec<f64>,
    kernel_index: Option<usize>,
    tol: f64,
) -> SpectrumReport {
    let delta = spec.delta();
    let big_delta = spec.big_delta();
    let mut zero_multiplicity = 0;
    let mut in_band = true;
    let mut borderline = false;
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        if Some(i) == kernel_index || lambda.abs() <= tol {
            zero_multiplicity += 1;
            continue;
        }
        if !(lambda >= delta - tol && lambda < big_delta) {
            in_band = false;
        }
        if lambda >= big_delta - tol {
            borderline = true;
        }
    }
    SpectrumReport {
        eigenvalues,
        zero_multiplicity,
        in_band,
        delta,
        big_delta,
        tol,
        borderline,
    }
}

/// Quasi-positivity (nonnegative off-diagonal, `M ≠ 0`) and irreducibility
/// (strongly connected sparsity digraph).
pub fn structure_flags(m: &DMatrix<f64>) -> Result<StructureFlags, SpectralError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(SpectralError::NotSquare(n, m.ncols()));
    }
    let off_diag_nonneg = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] >= 0.0));
    let nonzero = m.iter().any(|x| *x != 0.0);
    Ok(StructureFlags {
        quasi_positive: off_diag_nonneg && nonzero,
        irreducible: strongly_connected(m),
    })
}

fn strongly_connected(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { m[(i, j)] } else { m[(j, i)] };
                if i != j && edge != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}
