//! Mixture description and pointwise algebra.
//!
//! A mixture of `N+1` species is described by a symmetric matrix of
//! Maxwell-Stefan diffusivities `D_ij` (off-diagonal, strictly positive) and a
//! production law. Concentrations are molar fractions summing to one; the
//! solver works with the reduced vector `c' = (c_1, ..., c_N)` and treats
//! `c_{N+1} = 1 - Σ c_i` as implied.
//!
//! The matrices assembled here:
//!
//! ```text
//! A    (N+1)x(N+1)   a_ij = d_ij c_i (i≠j),  a_ii = -Σ_{j≠i} d_ij c_j
//! A_S  (N+1)x(N+1)   C^{-1/2} A C^{1/2}, symmetric, a^S_ij = d_ij sqrt(c_i c_j)
//! A0   N x N         a0_ij = -(d_ij - d_{i,N+1}) c_i (i≠j)
//!                    a0_ii = Σ_{j≠i} (d_ij - d_{i,N+1}) c_j + d_{i,N+1}
//! H    N x N         entropy Hessian, h_ij = 1/c_{N+1} + δ_ij / c_i
//! B    N x N         mobility A0^{-1} H^{-1}, symmetric positive definite
//! ```
//!
//! with `d_ij = 1 / D_ij`. Nonzero eigenvalues of `-A` and all eigenvalues of
//! `A0` lie in `[δ, Δ)` where `δ = min d_ij` and `Δ = 2 Σ_{i≠j} d_ij`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default floor used by the strict admissibility predicate.
pub const DEFAULT_ADMISSIBILITY_FLOOR: f64 = 1e-14;

/// Number of Monte-Carlo samples used to validate a production law.
pub const PRODUCTION_CHECK_SAMPLES: usize = 10_000;

const PRODUCTION_CHECK_SEED: u64 = 0x6d73_6466_6600_0001;

/// Relative tolerance for the symmetry check on `D`.
const SYMMETRY_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("a mixture needs at least 3 species, got {0}")]
    TooFewSpecies(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("diffusivity matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NonSymmetricD { i: usize, j: usize, a: f64, b: f64 },
    #[error("diffusivity D[{i}][{j}] = {value} must be finite and strictly positive")]
    NonPositiveOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("concentration vector is not admissible: {0}")]
    Inadmissible(String),
    #[error("concentration vector is not strictly admissible (floor {floor:e})")]
    NotStrictlyAdmissible { floor: f64 },
    #[error("entropy variables must be finite")]
    NonFiniteEntropyVariables,
    #[error("A0 could not be inverted to the required accuracy (residual {residual:e})")]
    SingularA0 { residual: f64 },
    #[error("production law {law} requires {expected} species, got {found}")]
    WrongSpeciesCount {
        law: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("production law is not mass conserving (Σ r = {defect:e} at a sample point)")]
    NonConservativeProduction { defect: f64 },
    #[error("invalid reaction: {0}")]
    InvalidReaction(String),
}

/// Molar fractions of all `N+1` species.
///
/// The last entry is stored explicitly so that states produced from entropy
/// variables keep full relative accuracy in `c_{N+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcVector {
    full: DVector<f64>,
}

impl ConcVector {
    /// Builds a state from the reduced vector `c'`; `c_{N+1} = 1 - Σ c_i`.
    pub fn from_reduced(reduced: &[f64]) -> Result<Self, MixtureError> {
        if let Some(i) = reduced.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(MixtureError::Inadmissible(format!(
                "c_{} = {} is negative or not finite",
                i + 1,
                reduced[i]
            )));
        }
        let sum: f64 = reduced.iter().sum();
        if sum > 1.0 {
            return Err(MixtureError::Inadmissible(format!(
                "Σ c_i = {sum} exceeds 1"
            )));
        }
        let mut full = DVector::zeros(reduced.len() + 1);
        full.rows_mut(0, reduced.len()).copy_from_slice(reduced);
        full[reduced.len()] = 1.0 - sum;
        Ok(Self { full })
    }

    /// Builds a state from all `N+1` fractions, which must sum to one.
    pub fn from_full(full: &[f64]) -> Result<Self, MixtureError> {
        if let Some(i) = full.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(MixtureError::Inadmissible(format!(
                "c_{} = {} is negative or not finite",
                i + 1,
                full[i]
            )));
        }
        let sum: f64 = full.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MixtureError::Inadmissible(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            full: DVector::from_column_slice(full),
        })
    }

    pub(crate) fn from_full_unchecked(full: DVector<f64>) -> Self {
        Self { full }
    }

    /// Number of reduced components `N`.
    pub fn n_reduced(&self) -> usize {
        self.full.len() - 1
    }

    pub fn n_species(&self) -> usize {
        self.full.len()
    }

    pub fn reduced(&self) -> &[f64] {
        &self.full.as_slice()[..self.n_reduced()]
    }

    pub fn last(&self) -> f64 {
        self.full[self.n_reduced()]
    }

    pub fn full(&self) -> &DVector<f64> {
        &self.full
    }

    /// `c_i ≥ 0` for all species.
    pub fn is_admissible(&self) -> bool {
        self.full.iter().all(|x| x.is_finite() && *x >= 0.0)
    }

    /// `c_i ≥ floor` for all `i ≤ N` and `Σ_{i≤N} c_i ≤ 1 - floor`.
    ///
    /// With `floor = 0` the inequalities are strict.
    pub fn is_strictly_admissible(&self, floor: f64) -> bool {
        let sum: f64 = self.reduced().iter().sum();
        if floor > 0.0 {
            self.full.iter().all(|x| *x >= floor) && sum <= 1.0 - floor
        } else {
            self.full.iter().all(|x| *x > 0.0) && sum < 1.0
        }
    }

    pub fn require_strict(&self, floor: f64) -> Result<(), MixtureError> {
        if self.is_strictly_admissible(floor) {
            Ok(())
        } else {
            Err(MixtureError::NotStrictlyAdmissible { floor })
        }
    }
}

/// Entropy variables `w_i = log(c_i / c_{N+1})`, `i = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyVector {
    w: DVector<f64>,
}

impl EntropyVector {
    pub fn new(w: &[f64]) -> Result<Self, MixtureError> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(MixtureError::NonFiniteEntropyVariables);
        }
        Ok(Self {
            w: DVector::from_column_slice(w),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        self.w.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.w
    }
}

/// One reversible mass-action reaction `Σ α_i X_i ⇌ Σ β_i X_i`.
///
/// The net rate is `k_f Π c_i^{α_i} - k_b Π c_i^{β_i}` and species `i` is
/// produced at `(β_i - α_i)` times that rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub reactants: Vec<u32>,
    pub products: Vec<u32>,
    pub forward_rate: f64,
    pub backward_rate: f64,
}

impl Reaction {
    fn net_rate(&self, c: &[f64]) -> f64 {
        let forward: f64 = self
            .reactants
            .iter()
            .zip(c)
            .map(|(&a, &x)| x.powi(a as i32))
            .product();
        let backward: f64 = self
            .products
            .iter()
            .zip(c)
            .map(|(&b, &x)| x.powi(b as i32))
            .product();
        self.forward_rate * forward - self.backward_rate * backward
    }
}

/// Table of reactions driving a [`ProductionLaw::Custom`] law.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReactionTable {
    pub reactions: Vec<Reaction>,
}

/// Production law `r(c)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProductionLaw {
    #[default]
    Zero,
    /// `N = 4`: `r_1 = r_3 = c_2 c_4 - c_1 c_3`, `r_2 = r_4 = -r_1`, `r_5 = 0`.
    QuaternaryReversible,
    Custom(ReactionTable),
}

impl ProductionLaw {
    pub fn name(&self) -> &'static str {
        match self {
            ProductionLaw::Zero => "zero",
            ProductionLaw::QuaternaryReversible => "quaternary",
            ProductionLaw::Custom(_) => "custom",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ProductionLaw::Zero)
    }

    /// Production rates of all `N+1` species. The last component is set to
    /// minus the sum of the others so that `Σ r_i = 0` holds exactly.
    pub fn rates(&self, c: &ConcVector) -> Result<DVector<f64>, MixtureError> {
        let n = c.n_species();
        let mut r = DVector::zeros(n);
        match self {
            ProductionLaw::Zero => {}
            ProductionLaw::QuaternaryReversible => {
                if n != 5 {
                    return Err(MixtureError::WrongSpeciesCount {
                        law: "quaternary",
                        expected: 5,
                        found: n,
                    });
                }
                let x = c.full();
                let a = x[1] * x[3] - x[0] * x[2];
                r[0] = a;
                r[1] = -a;
                r[2] = a;
                r[3] = -a;
            }
            ProductionLaw::Custom(table) => {
                table.validate_shape(n)?;
                let x = c.full().as_slice();
                for reaction in &table.reactions {
                    let net = reaction.net_rate(x);
                    for i in 0..n - 1 {
                        r[i] += (reaction.products[i] as f64 - reaction.reactants[i] as f64) * net;
                    }
                }
                let head: f64 = r.rows(0, n - 1).sum();
                r[n - 1] = -head;
            }
        }
        Ok(r)
    }

    /// Rates as the raw table gives them, without forcing the last component.
    fn raw_balance_defect(&self, c: &ConcVector) -> f64 {
        match self {
            ProductionLaw::Custom(table) => {
                let x = c.full().as_slice();
                let n = x.len();
                let mut total = 0.0;
                for reaction in &table.reactions {
                    let net = reaction.net_rate(x);
                    let stoich: f64 = (0..n)
                        .map(|i| reaction.products[i] as f64 - reaction.reactants[i] as f64)
                        .sum();
                    total += stoich * net;
                }
                total
            }
            _ => 0.0,
        }
    }
}

impl ReactionTable {
    fn validate_shape(&self, n_species: usize) -> Result<(), MixtureError> {
        for (k, reaction) in self.reactions.iter().enumerate() {
            if reaction.reactants.len() != n_species || reaction.products.len() != n_species {
                return Err(MixtureError::InvalidReaction(format!(
                    "reaction {} has stoichiometry of length {}/{}, expected {}",
                    k + 1,
                    reaction.reactants.len(),
                    reaction.products.len(),
                    n_species
                )));
            }
            if !(reaction.forward_rate >= 0.0 && reaction.backward_rate >= 0.0)
                || !reaction.forward_rate.is_finite()
                || !reaction.backward_rate.is_finite()
            {
                return Err(MixtureError::InvalidReaction(format!(
                    "reaction {} has invalid rate constants",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Result of sampling a production law over the open simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductionCheck {
    /// Largest sampled value of `Σ r_i log c_i`.
    pub max_entropy_production: f64,
    /// `Σ r_i log c_i ≤ 0` held at every sample.
    pub entropy_condition_holds: bool,
    /// Constant of the weakened condition `Σ r_i log c_i ≤ C_r`, zero when the
    /// strong condition holds.
    pub weakened_constant: f64,
}

/// Validated mixture description.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    n_species: usize,
    diffusivity: DMatrix<f64>,
    inv_diffusivity: DMatrix<f64>,
    delta: f64,
    big_delta: f64,
    production: ProductionLaw,
    production_check: ProductionCheck,
    admissibility_floor: f64,
}

impl MixtureSpec {
    /// Validates `D` and the production law. Only the off-diagonal part of
    /// `diffusivity` is read.
    pub fn new(
        n_species: usize,
        diffusivity: &DMatrix<f64>,
        production: ProductionLaw,
    ) -> Result<Self, MixtureError> {
        if n_species < 3 {
            return Err(MixtureError::TooFewSpecies(n_species));
        }
        if diffusivity.nrows() != n_species || diffusivity.ncols() != n_species {
            return Err(MixtureError::DimensionMismatch {
                expected: n_species,
                found: diffusivity.nrows().max(diffusivity.ncols()),
            });
        }
        for i in 0..n_species {
            for j in 0..n_species {
                if i == j {
                    continue;
                }
                let value = diffusivity[(i, j)];
                if !(value.is_finite() && value > 0.0) {
                    return Err(MixtureError::NonPositiveOffDiagonal { i, j, value });
                }
                let other = diffusivity[(j, i)];
                if (value - other).abs() > SYMMETRY_RTOL * value.abs().max(other.abs()) {
                    return Err(MixtureError::NonSymmetricD {
                        i,
                        j,
                        a: value,
                        b: other,
                    });
                }
            }
        }

        let mut d_mat = DMatrix::zeros(n_species, n_species);
        let mut inv = DMatrix::zeros(n_species, n_species);
        let mut delta = f64::INFINITY;
        let mut big_delta = 0.0;
        for i in 0..n_species {
            for j in 0..n_species {
                if i == j {
                    continue;
                }
                // symmetrize from the upper triangle
                let value = if i < j {
                    diffusivity[(i, j)]
                } else {
                    diffusivity[(j, i)]
                };
                d_mat[(i, j)] = value;
                inv[(i, j)] = 1.0 / value;
                delta = f64::min(delta, inv[(i, j)]);
                big_delta += 2.0 * inv[(i, j)];
            }
        }

        if let ProductionLaw::Custom(table) = &production {
            table.validate_shape(n_species)?;
        }
        if matches!(production, ProductionLaw::QuaternaryReversible) && n_species != 5 {
            return Err(MixtureError::WrongSpeciesCount {
                law: "quaternary",
                expected: 5,
                found: n_species,
            });
        }
        let production_check = check_production(n_species, &production)?;
        if !production_check.entropy_condition_holds {
            log::warn!(
                "production law only satisfies the weakened entropy condition \
                 Σ r_i log c_i ≤ C_r with C_r ≈ {:.3e}",
                production_check.weakened_constant
            );
        }

        Ok(Self {
            n_species,
            diffusivity: d_mat,
            inv_diffusivity: inv,
            delta,
            big_delta,
            production,
            production_check,
            admissibility_floor: DEFAULT_ADMISSIBILITY_FLOOR,
        })
    }

    /// Builds `D` from its strict upper triangle in row-major order
    /// (`D_12, D_13, ..., D_1n, D_23, ...`).
    pub fn from_upper_triangle(
        n_species: usize,
        upper: &[f64],
        production: ProductionLaw,
    ) -> Result<Self, MixtureError> {
        let expected = n_species * n_species.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(MixtureError::DimensionMismatch {
                expected,
                found: upper.len(),
            });
        }
        let mut d = DMatrix::zeros(n_species, n_species);
        let mut k = 0;
        for i in 0..n_species {
            for j in i + 1..n_species {
                d[(i, j)] = upper[k];
                d[(j, i)] = upper[k];
                k += 1;
            }
        }
        Self::new(n_species, &d, production)
    }

    /// All off-diagonal diffusivities equal to `value`.
    pub fn uniform(n_species: usize, value: f64, production: ProductionLaw) -> Result<Self, MixtureError> {
        let upper = vec![value; n_species * n_species.saturating_sub(1) / 2];
        Self::from_upper_triangle(n_species, &upper, production)
    }

    pub fn with_admissibility_floor(mut self, floor: f64) -> Self {
        self.admissibility_floor = floor;
        self
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    /// Number of reduced unknowns `N = n_species - 1`.
    pub fn n_reduced(&self) -> usize {
        self.n_species - 1
    }

    pub fn diffusivity(&self) -> &DMatrix<f64> {
        &self.diffusivity
    }

    /// `d_ij = 1 / D_ij`, zero on the diagonal.
    pub fn inverse_diffusivity(&self) -> &DMatrix<f64> {
        &self.inv_diffusivity
    }

    /// Lower spectral band edge `δ = min_{i≠j} d_ij`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Upper spectral band edge `Δ = 2 Σ_{i≠j} d_ij` over ordered pairs.
    pub fn big_delta(&self) -> f64 {
        self.big_delta
    }

    pub fn production(&self) -> &ProductionLaw {
        &self.production
    }

    pub fn production_check(&self) -> &ProductionCheck {
        &self.production_check
    }

    pub fn admissibility_floor(&self) -> f64 {
        self.admissibility_floor
    }

    /// `Some(D)` when every off-diagonal diffusivity is the same.
    pub fn common_diffusivity(&self) -> Option<f64> {
        let first = self.diffusivity[(0, 1)];
        let all_equal = (0..self.n_species).all(|i| {
            (0..self.n_species)
                .filter(|&j| j != i)
                .all(|j| self.diffusivity[(i, j)] == first)
        });
        all_equal.then_some(first)
    }

    fn check_dim(&self, c: &ConcVector) -> Result<(), MixtureError> {
        if c.n_species() != self.n_species {
            return Err(MixtureError::DimensionMismatch {
                expected: self.n_species,
                found: c.n_species(),
            });
        }
        Ok(())
    }

    /// Friction matrix `A(c)` of the flux-gradient relation `∇c = A J`.
    pub fn a_matrix(&self, c: &ConcVector) -> DMatrix<f64> {
        let n = self.n_species;
        let x = c.full();
        let d = &self.inv_diffusivity;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -(0..n).filter(|&k| k != i).map(|k| d[(i, k)] * x[k]).sum::<f64>()
            } else {
                d[(i, j)] * x[i]
            }
        })
    }

    /// Symmetrized friction matrix `A_S = C^{-1/2} A C^{1/2}`.
    pub fn a_sym(&self, c: &ConcVector) -> Result<DMatrix<f64>, MixtureError> {
        self.check_dim(c)?;
        c.require_strict(self.admissibility_floor)?;
        let n = self.n_species;
        let x = c.full();
        let d = &self.inv_diffusivity;
        Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -(0..n).filter(|&k| k != i).map(|k| d[(i, k)] * x[k]).sum::<f64>()
            } else {
                d[(i, j)] * (x[i] * x[j]).sqrt()
            }
        }))
    }

    /// Reduced friction matrix `A0(c')`, well defined on the closed simplex.
    pub fn a0(&self, c: &ConcVector) -> DMatrix<f64> {
        let n = self.n_reduced();
        let x = c.full();
        let d = &self.inv_diffusivity;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                (0..n)
                    .filter(|&k| k != i)
                    .map(|k| (d[(i, k)] - d[(i, n)]) * x[k])
                    .sum::<f64>()
                    + d[(i, n)]
            } else {
                -(d[(i, j)] - d[(i, n)]) * x[i]
            }
        })
    }

    /// `A0^{-1}` by LU with partial pivoting, checked to `‖A0 A0^{-1} - I‖ ≤ 1e-10`.
    pub fn a0_inverse(&self, c: &ConcVector) -> Result<DMatrix<f64>, MixtureError> {
        self.check_dim(c)?;
        let a0 = self.a0(c);
        let n = a0.nrows();
        let inv = a0
            .clone()
            .lu()
            .try_inverse()
            .ok_or(MixtureError::SingularA0 {
                residual: f64::INFINITY,
            })?;
        let residual = (&a0 * &inv - DMatrix::<f64>::identity(n, n)).amax();
        if !(residual <= 1e-10) {
            return Err(MixtureError::SingularA0 { residual });
        }
        Ok(inv)
    }

    /// Row bound `K = max_i (Σ_{k≠i} |d_ik - d_{i,N+1}| + d_{i,N+1})` on the
    /// entries of `A0` over the closed simplex.
    pub fn a0_row_bound(&self) -> f64 {
        let n = self.n_reduced();
        let d = &self.inv_diffusivity;
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&k| k != i)
                    .map(|k| (d[(i, k)] - d[(i, n)]).abs())
                    .sum::<f64>()
                    + d[(i, n)].abs()
            })
            .fold(0.0, f64::max)
    }

    /// Cramer-rule bound `(N-1)! K^{N-1} δ^{-N}` on the entries of `A0^{-1}`.
    pub fn a0_inverse_entry_bound(&self) -> f64 {
        let n = self.n_reduced();
        let factorial: f64 = (1..n).map(|k| k as f64).product();
        factorial * self.a0_row_bound().powi(n as i32 - 1) * self.delta.powi(-(n as i32))
    }

    /// Bound on the entries of `B`: each column of `H^{-1}` has absolute sum
    /// `2 c_j (1 - c_j) ≤ 1/2`.
    pub fn mobility_entry_bound(&self) -> f64 {
        0.5 * self.a0_inverse_entry_bound()
    }

    /// Mobility `B = A0^{-1} H^{-1}` from the closed-form entries
    /// `b_ij = α_ij (1 - c_j) c_j - Σ_{k≠j} α_ik c_k c_j`, which never divide by
    /// a concentration.
    pub fn mobility(&self, c: &ConcVector) -> Result<DMatrix<f64>, MixtureError> {
        let alpha = self.a0_inverse(c)?;
        let n = self.n_reduced();
        let x = c.full();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            let diag = alpha[(i, j)] * (1.0 - x[j]) * x[j];
            let off: f64 = (0..n)
                .filter(|&k| k != j)
                .map(|k| alpha[(i, k)] * x[k] * x[j])
                .sum();
            diag - off
        }))
    }

    /// `r(c)` for all `N+1` species.
    pub fn production_rates(&self, c: &ConcVector) -> DVector<f64> {
        // shape was validated at construction
        self.production
            .rates(c)
            .expect("production law validated against the species count")
    }
}

/// Entropy Hessian `H(c')` with respect to the reduced concentrations.
pub fn hessian(c: &ConcVector) -> Result<DMatrix<f64>, MixtureError> {
    c.require_strict(0.0)?;
    let n = c.n_reduced();
    let x = c.full();
    let inv_last = 1.0 / c.last();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            inv_last + 1.0 / x[i]
        } else {
            inv_last
        }
    }))
}

/// Closed-form `H^{-1}`: `η_ii = (1 - c_i) c_i`, `η_ij = -c_i c_j`.
pub fn inverse_hessian(c: &ConcVector) -> DMatrix<f64> {
    let n = c.n_reduced();
    let x = c.full();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (1.0 - x[i]) * x[i]
        } else {
            -x[i] * x[j]
        }
    })
}

/// `c_i = e^{w_i} / (1 + Σ_j e^{w_j})`, evaluated after shifting by the largest
/// exponent so that no term overflows.
pub fn w_to_c(w: &EntropyVector) -> ConcVector {
    let values = w.as_slice();
    let shift = values.iter().copied().fold(0.0, f64::max);
    let last_term = (-shift).exp();
    let terms: Vec<f64> = values.iter().map(|x| (x - shift).exp()).collect();
    let denom = last_term + terms.iter().sum::<f64>();
    let mut full = DVector::zeros(values.len() + 1);
    for (slot, t) in full.iter_mut().zip(&terms) {
        *slot = t / denom;
    }
    full[values.len()] = last_term / denom;
    ConcVector::from_full_unchecked(full)
}

/// `w_i = log(c_i / c_{N+1})`.
pub fn c_to_w(c: &ConcVector) -> Result<EntropyVector, MixtureError> {
    c.require_strict(0.0)?;
    let log_last = c.last().ln();
    let w: Vec<f64> = c.reduced().iter().map(|x| x.ln() - log_last).collect();
    EntropyVector::new(&w)
}

/// `x (log x - 1)` with the continuous extension `0` at `x = 0`.
pub fn entropy_term(x: f64) -> f64 {
    if x > 0.0 {
        x * (x.ln() - 1.0)
    } else {
        0.0
    }
}

/// `x log x` with value `0` at `x = 0`.
pub fn x_log_x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Entropy density `h(c) = Σ_{i=1}^{N+1} c_i (log c_i - 1)`.
pub fn entropy_density(c: &ConcVector) -> f64 {
    c.full().iter().map(|&x| entropy_term(x)).sum()
}

/// Uniform sample of the open simplex with `n_species` vertices.
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, n_species: usize) -> ConcVector {
    loop {
        let e: Vec<f64> = (0..n_species)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = e.iter().sum();
        let full: DVector<f64> = DVector::from_iterator(n_species, e.iter().map(|x| x / total));
        if full.iter().all(|x| *x > 0.0) {
            return ConcVector::from_full_unchecked(full);
        }
    }
}

fn check_production(
    n_species: usize,
    law: &ProductionLaw,
) -> Result<ProductionCheck, MixtureError> {
    if law.is_zero() {
        return Ok(ProductionCheck {
            max_entropy_production: 0.0,
            entropy_condition_holds: true,
            weakened_constant: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PRODUCTION_CHECK_SEED);
    let mut max_production = f64::NEG_INFINITY;
    for _ in 0..PRODUCTION_CHECK_SAMPLES {
        let c = sample_simplex(&mut rng, n_species);
        let defect = law.raw_balance_defect(&c);
        if defect.abs() > 1e-12 {
            return Err(MixtureError::NonConservativeProduction { defect });
        }
        let r = law.rates(&c)?;
        let production: f64 = r.iter().zip(c.full().iter()).map(|(ri, ci)| ri * ci.ln()).sum();
        max_production = max_production.max(production);
    }
    let holds = max_production <= 1e-14;
    Ok(ProductionCheck {
        max_entropy_production: max_production,
        entropy_condition_holds: holds,
        weakened_constant: if holds { 0.0 } else { max_production },
    })
}
