//! Per-cell simulation state in physical and entropy variables.

use crate::grid::Field;
use crate::mixture::{c_to_w, w_to_c, ConcVector, EntropyVector, MixtureError};

/// Molar fractions in every cell; row `m` holds all `N+1` species.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationField {
    values: Field,
}

impl ConcentrationField {
    /// Builds the field from per-cell vectors of all `N+1` fractions.
    pub fn from_cells(cells: &[ConcVector]) -> Self {
        let cols = cells.first().map_or(0, |c| c.n_species());
        let mut values = Field::zeros(cells.len(), cols);
        for (m, c) in cells.iter().enumerate() {
            values.row_mut(m).copy_from_slice(c.full().as_slice());
        }
        Self { values }
    }

    /// Validates each row as an admissible state summing to one.
    pub fn from_field(values: Field) -> Result<Self, MixtureError> {
        for m in 0..values.rows() {
            ConcVector::from_full(values.row(m))?;
        }
        Ok(Self { values })
    }

    /// Builds the field from the first `N` fractions of every cell.
    pub fn from_reduced(reduced: &Field) -> Result<Self, MixtureError> {
        let cells: Result<Vec<ConcVector>, MixtureError> = (0..reduced.rows())
            .map(|m| ConcVector::from_reduced(reduced.row(m)))
            .collect();
        Ok(Self::from_cells(&cells?))
    }

    pub fn cells(&self) -> usize {
        self.values.rows()
    }

    pub fn n_species(&self) -> usize {
        self.values.cols()
    }

    pub fn n_reduced(&self) -> usize {
        self.values.cols() - 1
    }

    pub fn cell(&self, m: usize) -> ConcVector {
        ConcVector::from_full_unchecked(nalgebra::DVector::from_column_slice(self.values.row(m)))
    }

    pub fn get(&self, m: usize, i: usize) -> f64 {
        self.values.get(m, i)
    }

    /// All `N+1` species.
    pub fn full(&self) -> &Field {
        &self.values
    }

    /// First `N` species.
    pub fn reduced(&self) -> Field {
        let n = self.n_reduced();
        Field::from_fn(self.cells(), n, |m, i| self.values.get(m, i))
    }

    /// Smallest fraction over all cells and species.
    pub fn min_value(&self) -> f64 {
        self.values.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `Σ_{i≤N} c_i` over all cells.
    pub fn max_reduced_sum(&self) -> f64 {
        let n = self.n_reduced();
        (0..self.cells())
            .map(|m| self.values.row(m)[..n].iter().sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every cell has `c_i > 0` for all species and `Σ_{i≤N} c_i < 1`.
    pub fn strictly_inside(&self) -> bool {
        self.min_value() > 0.0 && self.max_reduced_sum() < 1.0
    }

    /// Entropy variables of every cell.
    pub fn to_entropy(&self) -> Result<EntropyField, MixtureError> {
        let n = self.n_reduced();
        let mut w = Field::zeros(self.cells(), n);
        for m in 0..self.cells() {
            let wm = c_to_w(&self.cell(m))?;
            w.row_mut(m).copy_from_slice(wm.as_slice());
        }
        Ok(EntropyField { values: w })
    }
}

/// Entropy variables `w ∈ ℝ^N` in every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    values: Field,
}

impl EntropyField {
    pub fn from_field(values: Field) -> Result<Self, MixtureError> {
        if values.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(MixtureError::NonFiniteEntropyVariables);
        }
        Ok(Self { values })
    }

    pub fn cells(&self) -> usize {
        self.values.rows()
    }

    pub fn n_reduced(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.as_slice().iter().all(|x| x.is_finite())
    }

    pub fn cell(&self, m: usize) -> EntropyVector {
        EntropyVector::new(self.values.row(m)).expect("entropy field holds finite values")
    }

    /// Concentrations `c(w)` of every cell.
    pub fn to_concentrations(&self) -> ConcentrationField {
        let n = self.n_reduced();
        let mut c = Field::zeros(self.cells(), n + 1);
        for m in 0..self.cells() {
            let cm = w_to_c(&self.cell(m));
            c.row_mut(m).copy_from_slice(cm.full().as_slice());
        }
        ConcentrationField { values: c }
    }
}
