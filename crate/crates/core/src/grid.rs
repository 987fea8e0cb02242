//! Uniform cell-centered grid on `(0, L)` with homogeneous Neumann boundaries.
//!
//! Cells `m = 0..M` have centers `x_m = (m + 1/2) h`. Faces `0..=M` sit
//! between cells; faces `0` and `M` are the boundary and carry zero flux.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("domain length must be finite and positive, got {0}")]
    BadLength(f64),
    #[error("need at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("dimension mismatch: expected {expected} rows, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    length: f64,
    cells: usize,
    h: f64,
}

impl Grid1D {
    pub fn new(length: f64, cells: usize) -> Result<Self, GridError> {
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::BadLength(length));
        }
        if cells < 2 {
            return Err(GridError::TooFewCells(cells));
        }
        Ok(Self {
            length,
            cells,
            h: length / cells as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn faces(&self) -> usize {
        self.cells + 1
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.h
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cells).map(|m| self.center(m))
    }

    fn expect_rows(&self, f: &Field, rows: usize) -> Result<(), GridError> {
        if f.rows() != rows {
            return Err(GridError::DimensionMismatch {
                expected: rows,
                found: f.rows(),
            });
        }
        Ok(())
    }
}

/// Row-major table of per-cell (or per-face) vectors.
///
/// Cell fields have `M` rows, face fields `M + 1`. Row `m` holds the
/// component vector of cell/face `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for m in 0..rows {
            for i in 0..cols {
                data.push(f(m, i));
            }
        }
        Self { rows, cols, data }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "field data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, i: usize) -> f64 {
        self.data[m * self.cols + i]
    }

    pub fn set(&mut self, m: usize, i: usize, value: f64) {
        self.data[m * self.cols + i] = value;
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |m| self.get(m, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `max |a - b|`; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Face gradients `(f_m - f_{m-1}) / h` on interior faces, zero on the two
/// boundary faces.
pub fn face_gradient(grid: &Grid1D, f: &Field) -> Result<Field, GridError> {
    grid.expect_rows(f, grid.cells())?;
    let h = grid.spacing();
    let mut out = Field::zeros(grid.faces(), f.cols());
    for face in 1..grid.cells() {
        for i in 0..f.cols() {
            out.set(face, i, (f.get(face, i) - f.get(face - 1, i)) / h);
        }
    }
    Ok(out)
}

/// Cell divergence `(flux_{m+1} - flux_m) / h` of a face field.
pub fn divergence(grid: &Grid1D, flux: &Field) -> Result<Field, GridError> {
    grid.expect_rows(flux, grid.faces())?;
    let h = grid.spacing();
    Ok(Field::from_fn(grid.cells(), flux.cols(), |m, i| {
        (flux.get(m + 1, i) - flux.get(m, i)) / h
    }))
}

/// Dense reflecting-boundary Laplacian, `divergence ∘ face_gradient`.
pub fn neumann_laplacian(grid: &Grid1D) -> DMatrix<f64> {
    let m = grid.cells();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut lap = DMatrix::zeros(m, m);
    for k in 0..m {
        if k > 0 {
            lap[(k, k - 1)] = inv_h2;
            lap[(k, k)] -= inv_h2;
        }
        if k + 1 < m {
            lap[(k, k + 1)] = inv_h2;
            lap[(k, k)] -= inv_h2;
        }
    }
    lap
}

/// Applies the Neumann Laplacian to every component of a cell field.
pub fn apply_laplacian(grid: &Grid1D, f: &Field) -> Result<Field, GridError> {
    grid.expect_rows(f, grid.cells())?;
    let m = grid.cells();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    Ok(Field::from_fn(m, f.cols(), |k, i| {
        let center = f.get(k, i);
        let mut acc = 0.0;
        if k > 0 {
            acc += f.get(k - 1, i) - center;
        }
        if k + 1 < m {
            acc += f.get(k + 1, i) - center;
        }
        acc * inv_h2
    }))
}

/// Midpoint quadrature `Σ_m f_m h` per component.
pub fn integrate(grid: &Grid1D, f: &Field) -> Result<Vec<f64>, GridError> {
    grid.expect_rows(f, grid.cells())?;
    let h = grid.spacing();
    Ok((0..f.cols()).map(|i| f.column(i).sum::<f64>() * h).collect())
}
