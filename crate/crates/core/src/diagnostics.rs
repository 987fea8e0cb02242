//! Entropy, dissipation, mass and flux functionals of a discrete state, and
//! the per-step audit that checks the discrete entropy inequality and its
//! companions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::grid::{apply_laplacian, Field, Grid1D, GridError};
use crate::mixture::{entropy_term, hessian, ConcVector, MixtureError, MixtureSpec};
use crate::state::{ConcentrationField, EntropyField};

/// Tolerance on `c - c(w)` for fields handed to [`dissipation`].
pub const CONSISTENCY_TOL: f64 = 1e-10;
/// Allowed shortfall in `raw ≥ (4/Δ) sqrt_form`.
pub const DISSIPATION_CONTRACT_TOL: f64 = 1e-9;
/// Per-step tolerance of the mass identity.
pub const MASS_TOL: f64 = 1e-10;
/// Relative tolerance of the Maxwell-Stefan flux residual.
pub const FLUX_RTOL: f64 = 1e-8;
/// Uphill products below this fraction of the largest `|J_i| |∇c_i|` count
/// as rounding noise.
pub const UPHILL_NOISE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("reference composition must be strictly positive and sum to 1: {0}")]
    BadReference(String),
    #[error("concentrations and entropy variables disagree by {0:e}")]
    InconsistentFields(f64),
    #[error("need at least {needed} records in the fit window, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("relative entropy {value:e} at t = {time} is not positive")]
    NonPositiveEntropy { time: f64, value: f64 },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scalar summary of one state along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    /// Step length that produced this state; zero for the initial record.
    pub tau: f64,
    pub entropy: f64,
    pub relative_entropy: f64,
    pub dissipation_raw: f64,
    pub dissipation_sqrt: f64,
    /// `Σ_m (|L w|² + |w|²) h`.
    pub dissipation_reg: f64,
    pub masses: Vec<f64>,
    pub min_c: f64,
    pub max_reduced_sum: f64,
    pub picard_iterations: usize,
}

impl DiagnosticsRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        spec: &MixtureSpec,
        grid: &Grid1D,
        c: &ConcentrationField,
        w: &EntropyField,
        reference: &[f64],
        time: f64,
        tau: f64,
        picard_iterations: usize,
    ) -> Result<Self, DiagnosticsError> {
        let d = dissipation(spec, grid, c, w)?;
        Ok(Self {
            time,
            tau,
            entropy: entropy_functional(grid, c),
            relative_entropy: relative_entropy(grid, c, reference)?,
            dissipation_raw: d.raw,
            dissipation_sqrt: d.sqrt_form,
            dissipation_reg: regularization_norm(grid, w)?,
            masses: masses(grid, c),
            min_c: c.min_value(),
            max_reduced_sum: c.max_reduced_sum(),
            picard_iterations,
        })
    }
}

/// `𝓗[c] = Σ_m h(c_m) h`.
pub fn entropy_functional(grid: &Grid1D, c: &ConcentrationField) -> f64 {
    let total: f64 = c.full().as_slice().iter().map(|&x| entropy_term(x)).sum();
    total * grid.spacing()
}

/// `∫ c_i` for all `N+1` species.
pub fn masses(grid: &Grid1D, c: &ConcentrationField) -> Vec<f64> {
    let h = grid.spacing();
    (0..c.n_species())
        .map(|i| c.full().column(i).sum::<f64>() * h)
        .collect()
}

/// Spatial average `c̄_i = ∫ c_i / L`.
pub fn mean_composition(grid: &Grid1D, c: &ConcentrationField) -> Vec<f64> {
    masses(grid, c)
        .into_iter()
        .map(|m| m / grid.length())
        .collect()
}

fn check_reference(reference: &[f64], n_species: usize) -> Result<(), DiagnosticsError> {
    if reference.len() != n_species {
        return Err(DiagnosticsError::BadReference(format!(
            "expected {n_species} entries, found {}",
            reference.len()
        )));
    }
    if reference.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(DiagnosticsError::BadReference("entries must be positive".into()));
    }
    let total: f64 = reference.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(DiagnosticsError::BadReference(format!("entries sum to {total}")));
    }
    Ok(())
}

/// `𝓗*[c] = Σ_i ∫ c_i log(c_i / c̄_i)`.
pub fn relative_entropy(
    grid: &Grid1D,
    c: &ConcentrationField,
    reference: &[f64],
) -> Result<f64, DiagnosticsError> {
    check_reference(reference, c.n_species())?;
    let mut total = 0.0;
    for m in 0..c.cells() {
        for (i, &r) in reference.iter().enumerate() {
            let x = c.get(m, i);
            if x > 0.0 {
                total += x * (x / r).ln();
            }
        }
    }
    // Jensen makes the exact value nonnegative; keep rounding from flipping the sign
    Ok((total * grid.spacing()).max(0.0))
}

/// `Σ_i ‖c_i - c̄_i‖_{L¹}` against the Pinsker-form bound `√(2 L 𝓗*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerCheck {
    pub l1_distance: f64,
    pub bound: f64,
}

impl PinskerCheck {
    pub fn holds(&self) -> bool {
        self.l1_distance <= self.bound * (1.0 + 1e-12) + 1e-14
    }
}

pub fn pinsker_check(
    grid: &Grid1D,
    c: &ConcentrationField,
    reference: &[f64],
) -> Result<PinskerCheck, DiagnosticsError> {
    let rel = relative_entropy(grid, c, reference)?;
    let mut l1 = 0.0;
    for m in 0..c.cells() {
        for (i, &r) in reference.iter().enumerate() {
            l1 += (c.get(m, i) - r).abs();
        }
    }
    Ok(PinskerCheck {
        l1_distance: l1 * grid.spacing(),
        bound: (2.0 * grid.length() * rel).sqrt(),
    })
}

/// Both sides of the dissipation inequality at quadrature level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dissipation {
    /// `Σ_faces ∇w · B̄ ∇w h` with `B̄` the mean of the adjacent cell mobilities.
    pub raw: f64,
    /// `Σ_faces Σ_{i≤N+1} |∇√c_i|² h`.
    pub sqrt_form: f64,
}

impl Dissipation {
    /// `raw - (4/Δ) sqrt_form`.
    pub fn contract_margin(&self, big_delta: f64) -> f64 {
        self.raw - 4.0 / big_delta * self.sqrt_form
    }
}

/// Per-cell mobility matrices.
pub fn cell_mobilities(
    spec: &MixtureSpec,
    c: &ConcentrationField,
) -> Result<Vec<DMatrix<f64>>, MixtureError> {
    (0..c.cells()).map(|m| spec.mobility(&c.cell(m))).collect()
}

/// Symmetric part of the mean of two cell mobilities.
pub fn face_mobility(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = (left + right) * 0.5;
    (&mean + mean.transpose()) * 0.5
}

pub fn dissipation(
    spec: &MixtureSpec,
    grid: &Grid1D,
    c: &ConcentrationField,
    w: &EntropyField,
) -> Result<Dissipation, DiagnosticsError> {
    if c.cells() != w.cells() || c.n_reduced() != w.n_reduced() {
        return Err(DiagnosticsError::InconsistentFields(f64::INFINITY));
    }
    let mismatch = w.to_concentrations().full().max_abs_diff(c.full());
    if !(mismatch <= CONSISTENCY_TOL) {
        return Err(DiagnosticsError::InconsistentFields(mismatch));
    }
    let h = grid.spacing();
    let n = c.n_reduced();
    let mobility = cell_mobilities(spec, c)?;
    let mut raw = 0.0;
    let mut sqrt_form = 0.0;
    for face in 1..c.cells() {
        let b = face_mobility(&mobility[face - 1], &mobility[face]);
        let grad = DVector::from_fn(n, |i, _| {
            (w.values().get(face, i) - w.values().get(face - 1, i)) / h
        });
        raw += grad.dot(&(&b * &grad)) * h;
        for i in 0..c.n_species() {
            let g = (c.get(face, i).sqrt() - c.get(face - 1, i).sqrt()) / h;
            sqrt_form += g * g * h;
        }
    }
    Ok(Dissipation { raw, sqrt_form })
}

/// Both sides of the dissipation inequality at one state for a gradient
/// `∇c'` of the first `N` concentrations: `∇w·B∇w` with `∇w = H ∇c'`, and
/// `Σ_{i≤N+1} |∇c_i|² / (4 c_i)`.
pub fn pointwise_dissipation(
    spec: &MixtureSpec,
    c: &ConcVector,
    grad_reduced: &[f64],
) -> Result<Dissipation, MixtureError> {
    let n = c.n_reduced();
    if grad_reduced.len() != n {
        return Err(MixtureError::DimensionMismatch {
            expected: n,
            found: grad_reduced.len(),
        });
    }
    let g = DVector::from_column_slice(grad_reduced);
    let grad_w = hessian(c)? * &g;
    let raw = grad_w.dot(&(spec.mobility(c)? * &grad_w));
    let last = -g.sum();
    let full = c.full();
    let sqrt_form = g
        .iter()
        .chain(std::iter::once(&last))
        .zip(full.iter())
        .map(|(gi, ci)| gi * gi / (4.0 * ci))
        .sum();
    Ok(Dissipation { raw, sqrt_form })
}

/// `Σ_m (|L w_m|² + |w_m|²) h`, the regularization part of the discrete
/// entropy inequality.
pub fn regularization_norm(grid: &Grid1D, w: &EntropyField) -> Result<f64, GridError> {
    let lw = apply_laplacian(grid, w.values())?;
    let sq = |f: &Field| f.as_slice().iter().map(|x| x * x).sum::<f64>();
    Ok((sq(&lw) + sq(w.values())) * grid.spacing())
}

/// A face and species where the flux points up the concentration gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UphillEvent {
    pub face: usize,
    pub species: usize,
    /// `J_i ∇c_i > 0`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxReconstruction {
    /// `faces × (N+1)`; boundary rows are zero.
    pub fluxes: Field,
    /// `max |∇c_i + Σ_{j≠i} (c_j J_i - c_i J_j) / D_ij|` over faces and species.
    pub residual: f64,
    /// `max |∇c_i|`, the scale of the residual.
    pub scale: f64,
    /// Strongest uphill event, if any exceeds the noise floor.
    pub uphill: Option<UphillEvent>,
}

impl FluxReconstruction {
    pub fn relative_residual(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Fluxes `J' = -A₀(c̄)^{-1} ∇c'` at interior faces, `c̄` the mean of the two
/// cells, closed by `J_{N+1} = -Σ J_i` and checked against the original
/// Maxwell-Stefan relations.
pub fn reconstruct_fluxes(
    spec: &MixtureSpec,
    grid: &Grid1D,
    c: &ConcentrationField,
) -> Result<FluxReconstruction, DiagnosticsError> {
    let floor = spec.admissibility_floor();
    for m in 0..c.cells() {
        c.cell(m).require_strict(floor)?;
    }
    let h = grid.spacing();
    let n = c.n_reduced();
    let ns = c.n_species();
    let dm = spec.diffusivity();
    let mut fluxes = Field::zeros(c.cells() + 1, ns);
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut products = Vec::new();
    let mut product_scale: f64 = 0.0;
    // gradients of stored concentrations are resolved only to about ulp/h
    let grad_noise = 64.0 * f64::EPSILON / h;
    for face in 1..c.cells() {
        let mean: Vec<f64> = (0..ns)
            .map(|i| 0.5 * (c.get(face - 1, i) + c.get(face, i)))
            .collect();
        let cbar = ConcVector::from_full_unchecked(DVector::from_vec(mean.clone()));
        let alpha = spec.a0_inverse(&cbar)?;
        // the last gradient follows from the volume constraint; differencing
        // the stored last column adds rounding noise of order ulp/h
        let mut grad: Vec<f64> = (0..n)
            .map(|i| (c.get(face, i) - c.get(face - 1, i)) / h)
            .collect();
        grad.push(-grad.iter().sum::<f64>());
        let grad_reduced = DVector::from_column_slice(&grad[..n]);
        let j_reduced = -(&alpha * grad_reduced);
        let mut j = j_reduced.as_slice().to_vec();
        j.push(-j_reduced.sum());
        for i in 0..ns {
            let friction: f64 = (0..ns)
                .filter(|&k| k != i)
                .map(|k| (mean[k] * j[i] - mean[i] * j[k]) / dm[(i, k)])
                .sum();
            residual = residual.max((grad[i] + friction).abs());
            scale = scale.max(grad[i].abs());
            fluxes.set(face, i, j[i]);
            let p = j[i] * grad[i];
            product_scale = product_scale.max(p.abs());
            products.push(UphillEvent {
                face,
                species: i,
                product: p,
            });
        }
    }
    let uphill = products
        .into_iter()
        .filter(|e| e.product > UPHILL_NOISE * product_scale && e.product > grad_noise * grad_noise)
        .max_by(|a, b| a.product.total_cmp(&b.product));
    Ok(FluxReconstruction {
        fluxes,
        residual,
        scale,
        uphill,
    })
}

/// Least-squares fit `log 𝓗*(t) ≈ a - λ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Minimum number of records in a fit window.
pub const MIN_FIT_POINTS: usize = 10;

/// Second half of the recorded time span.
pub fn default_window(records: &[DiagnosticsRecord]) -> (f64, f64) {
    match (records.first(), records.last()) {
        (Some(a), Some(b)) => (0.5 * (a.time + b.time), b.time),
        _ => (0.0, 0.0),
    }
}

pub fn fit_decay_rate(
    records: &[DiagnosticsRecord],
    window: (f64, f64),
) -> Result<DecayFit, DiagnosticsError> {
    let (t0, t1) = window;
    let slack = 1e-12 * t1.abs().max(1.0);
    let picked: Vec<&DiagnosticsRecord> = records
        .iter()
        .filter(|r| r.time >= t0 - slack && r.time <= t1 + slack)
        .collect();
    if picked.len() < MIN_FIT_POINTS {
        return Err(DiagnosticsError::InsufficientData {
            needed: MIN_FIT_POINTS,
            found: picked.len(),
        });
    }
    if let Some(r) = picked.iter().find(|r| !(r.relative_entropy > 0.0)) {
        return Err(DiagnosticsError::NonPositiveEntropy {
            time: r.time,
            value: r.relative_entropy,
        });
    }
    let k = picked.len() as f64;
    let ts: Vec<f64> = picked.iter().map(|r| r.time).collect();
    let ys: Vec<f64> = picked.iter().map(|r| r.relative_entropy.ln()).collect();
    let t_mean = ts.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let stt: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let sty: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let sse: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - y_mean - slope * (t - t_mean)).powi(2))
        .sum();
    // a flat series is fitted exactly by a zero slope
    let scale = y_mean.abs().max(1.0);
    let r_squared = if syy <= (1e-14 * scale).powi(2) * k {
        1.0
    } else {
        1.0 - sse / syy
    };
    Ok(DecayFit {
        lambda: -slope,
        r_squared,
        points: picked.len(),
    })
}

/// One inequality of the per-step audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub passed: bool,
    /// Allowed minus observed; negative on failure.
    pub margin: f64,
}

impl Check {
    fn from_margin(margin: f64) -> Self {
        Self {
            passed: margin >= 0.0,
            margin,
        }
    }
}

/// Pass/fail of every per-step inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditVerdict {
    pub step: usize,
    pub time: f64,
    pub entropy: Check,
    pub mass: Check,
    pub bounds: Check,
    pub dissipation: Check,
    pub flux: Check,
    pub flux_relative_residual: f64,
    pub uphill: Option<UphillEvent>,
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        self.entropy.passed
            && self.mass.passed
            && self.bounds.passed
            && self.dissipation.passed
            && self.flux.passed
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, check) in [
            ("entropy", self.entropy),
            ("mass", self.mass),
            ("bounds", self.bounds),
            ("dissipation", self.dissipation),
            ("flux", self.flux),
        ] {
            if !check.passed {
                out.push(name);
            }
        }
        out
    }
}

/// A state together with its record.
#[derive(Debug, Clone, Copy)]
pub struct AuditState<'a> {
    pub record: &'a DiagnosticsRecord,
    pub c: &'a ConcentrationField,
    pub w: &'a EntropyField,
}

/// Tolerances and step data the audit needs from the scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditParams {
    pub tau: f64,
    pub eps: f64,
    /// Added to the right-hand side of the entropy inequality.
    pub solver_slack: f64,
}

/// Audits the step `prev → next`:
///
/// - entropy: `𝓗ᵏ + (4τ/Δ) D_sqrt + ετ D_reg ≤ 𝓗ᵏ⁻¹ + slack`, plus
///   `C_r τ L` when the production law satisfies only the weakened condition;
/// - mass: `Δ∫c_i = -ετ ∫w_i + τ ∫r_i(c)` for every species and
///   `Σ_i ∫c_i = L`, both to [`MASS_TOL`];
/// - bounds: `c_i > 0` and `Σ_{i≤N} c_i < 1` everywhere;
/// - dissipation: `raw ≥ (4/Δ) sqrt_form - 1e-9`;
/// - flux: Maxwell-Stefan residual within [`FLUX_RTOL`] of its scale.
pub fn audit_step(
    spec: &MixtureSpec,
    grid: &Grid1D,
    params: &AuditParams,
    step: usize,
    prev: AuditState<'_>,
    next: AuditState<'_>,
) -> Result<AuditVerdict, DiagnosticsError> {
    let big_delta = spec.big_delta();
    let (tau, eps) = (params.tau, params.eps);
    let rn = next.record;

    let mut allowance = params.solver_slack;
    let check = spec.production_check();
    if !spec.production().is_zero() && !check.entropy_condition_holds {
        allowance += check.weakened_constant * tau * grid.length();
    }
    let lhs = rn.entropy + 4.0 * tau / big_delta * rn.dissipation_sqrt + eps * tau * rn.dissipation_reg;
    let entropy = Check::from_margin(prev.record.entropy + allowance - lhs);

    let h = grid.spacing();
    let n = next.w.n_reduced();
    let mut production = vec![0.0; n + 1];
    if !spec.production().is_zero() {
        for m in 0..next.c.cells() {
            let r = spec.production_rates(&next.c.cell(m));
            for (acc, ri) in production.iter_mut().zip(r.iter()) {
                *acc += ri * h;
            }
        }
    }
    let mut w_integral: Vec<f64> = (0..n)
        .map(|i| next.w.values().column(i).sum::<f64>() * h)
        .collect();
    w_integral.push(-w_integral.iter().sum::<f64>());
    let mut mass_error: f64 = 0.0;
    for i in 0..=n {
        let expected = prev.record.masses[i] - eps * tau * w_integral[i] + tau * production[i];
        mass_error = mass_error.max((rn.masses[i] - expected).abs());
    }
    let total: f64 = rn.masses.iter().sum();
    mass_error = mass_error.max((total - grid.length()).abs());
    let mass = Check::from_margin(MASS_TOL - mass_error);

    let bounds = Check {
        passed: rn.min_c > 0.0 && rn.max_reduced_sum < 1.0,
        margin: rn.min_c.min(1.0 - rn.max_reduced_sum),
    };

    let dissipation = Check::from_margin(
        rn.dissipation_raw - 4.0 / big_delta * rn.dissipation_sqrt + DISSIPATION_CONTRACT_TOL,
    );

    let fluxes = reconstruct_fluxes(spec, grid, next.c)?;
    let flux = Check::from_margin(FLUX_RTOL * fluxes.scale.max(f64::MIN_POSITIVE) - fluxes.residual);

    Ok(AuditVerdict {
        step,
        time: rn.time,
        entropy,
        mass,
        bounds,
        dissipation,
        flux,
        flux_relative_residual: fluxes.relative_residual(),
        uphill: fluxes.uphill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::ProductionLaw;
    use approx::assert_relative_eq;

    fn field<R: AsRef<[f64]>>(rows: &[R]) -> ConcentrationField {
        let cols = rows[0].as_ref().len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        ConcentrationField::from_field(Field::from_vec(rows.len(), cols, data)).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let g = Grid1D::new(1.0, 2).unwrap();
        let third = 1.0 / 3.0;
        let uniform = field(&[[third; 3], [third; 3]]);
        assert_relative_eq!(entropy_functional(&g, &uniform), -1.0 - 3f64.ln(), epsilon = 1e-14);

        let corner = field(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_relative_eq!(entropy_functional(&g, &corner), -1.0, epsilon = 1e-15);

        let two = field(&[&[0.5, 0.25, 0.25], &[third, third, third]]);
        assert_relative_eq!(entropy_functional(&g, &two), -2.069166529754014, epsilon = 1e-14);
    }

    #[test]
    fn relative_entropy_examples() {
        let g = Grid1D::new(1.0, 2).unwrap();
        let state = field(&[&[0.5, 0.25, 0.25], &[0.5, 0.25, 0.25]]);
        let third = [1.0 / 3.0; 3];
        assert_relative_eq!(
            relative_entropy(&g, &state, &third).unwrap(),
            0.05889151782819174,
            epsilon = 1e-14
        );
        assert_eq!(relative_entropy(&g, &state, &[0.5, 0.25, 0.25]).unwrap(), 0.0);
        let avg = mean_composition(&g, &state);
        assert!(relative_entropy(&g, &state, &avg).unwrap() < 1e-16);
        assert!(matches!(
            relative_entropy(&g, &state, &[0.5, 0.5, 0.0]),
            Err(DiagnosticsError::BadReference(_))
        ));
        assert!(relative_entropy(&g, &state, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pinsker_holds_on_a_step() {
        let g = Grid1D::new(1.0, 2).unwrap();
        let state = field(&[&[0.8, 0.1, 0.1], &[0.1, 0.2, 0.7]]);
        let avg = mean_composition(&g, &state);
        let p = pinsker_check(&g, &state, &avg).unwrap();
        assert!(p.holds(), "{p:?}");
        assert!(p.l1_distance > 0.0);
    }

    fn entropy_field(c: &ConcentrationField) -> EntropyField {
        c.to_entropy().unwrap()
    }

    #[test]
    fn dissipation_examples() {
        let spec = MixtureSpec::uniform(3, 2.0, ProductionLaw::Zero).unwrap();
        let g = Grid1D::new(1.0, 3).unwrap();
        let flat = field(&[[0.2, 0.3, 0.5]; 3]);
        let d = dissipation(&spec, &g, &flat, &entropy_field(&flat)).unwrap();
        assert_eq!((d.raw, d.sqrt_form), (0.0, 0.0));

        let c = field(&[&[0.2, 0.3, 0.5], &[0.25, 0.3, 0.45], &[0.3, 0.35, 0.35]]);
        let w = entropy_field(&c);
        let d = dissipation(&spec, &g, &c, &w).unwrap();
        // equal diffusivities: B = D H^{-1}
        let h = g.spacing();
        let mut expected = 0.0;
        for face in 1..3 {
            let hinv = |m: usize| crate::mixture::inverse_hessian(&c.cell(m)) * 2.0;
            let b = (hinv(face - 1) + hinv(face)) * 0.5;
            let grad = DVector::from_fn(2, |i, _| (w.values().get(face, i) - w.values().get(face - 1, i)) / h);
            expected += grad.dot(&(&b * &grad)) * h;
        }
        assert_relative_eq!(d.raw, expected, max_relative = 1e-12);
        assert!(d.contract_margin(spec.big_delta()) > 0.0);

        let wrong = entropy_field(&flat);
        assert!(matches!(
            dissipation(&spec, &g, &c, &wrong),
            Err(DiagnosticsError::InconsistentFields(_))
        ));
    }

    #[test]
    fn flux_examples() {
        let g = Grid1D::new(1.0, 4).unwrap();
        let spec = MixtureSpec::from_upper_triangle(3, &[1.0, 2.0, 3.0], ProductionLaw::Zero).unwrap();
        let flat = field(&[[0.2, 0.3, 0.5]; 4]);
        let f = reconstruct_fluxes(&spec, &g, &flat).unwrap();
        assert_eq!(f.residual, 0.0);
        assert_eq!(f.fluxes.max_abs(), 0.0);
        assert!(f.uphill.is_none());

        let linear = ConcentrationField::from_field(Field::from_fn(4, 3, |m, i| {
            let x = g.center(m);
            [0.2 + 0.3 * x, 0.5 - 0.2 * x, 0.3 - 0.1 * x][i]
        }))
        .unwrap();
        let f = reconstruct_fluxes(&spec, &g, &linear).unwrap();
        assert!(f.residual <= 1e-10, "{}", f.residual);
        for face in 0..=4 {
            let total: f64 = f.fluxes.row(face).iter().sum();
            assert!(total.abs() < 1e-15);
        }

        let fick = MixtureSpec::uniform(3, 0.7, ProductionLaw::Zero).unwrap();
        let f = reconstruct_fluxes(&fick, &g, &linear).unwrap();
        assert!(f.residual <= 1e-12);
        let h = g.spacing();
        for face in 1..4 {
            for i in 0..3 {
                let grad = (linear.get(face, i) - linear.get(face - 1, i)) / h;
                assert_relative_eq!(f.fluxes.get(face, i), -0.7 * grad, max_relative = 1e-12);
            }
        }
        assert!(f.uphill.is_none());

        let corner = field(&[[1.0, 0.0, 0.0]; 4]);
        assert!(reconstruct_fluxes(&spec, &g, &corner).is_err());
    }

    fn synthetic(values: impl Fn(f64) -> f64) -> Vec<DiagnosticsRecord> {
        (0..=40)
            .map(|k| {
                let t = k as f64 * 0.05;
                DiagnosticsRecord {
                    time: t,
                    tau: 0.05,
                    entropy: -1.0,
                    relative_entropy: values(t),
                    dissipation_raw: 0.0,
                    dissipation_sqrt: 0.0,
                    dissipation_reg: 0.0,
                    masses: vec![],
                    min_c: 0.1,
                    max_reduced_sum: 0.9,
                    picard_iterations: 1,
                }
            })
            .collect()
    }

    #[test]
    fn decay_fit_examples() {
        let recs = synthetic(|t| (-2.0 * t).exp());
        let fit = fit_decay_rate(&recs, default_window(&recs)).unwrap();
        assert_relative_eq!(fit.lambda, 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(fit.points, 21);

        let flat = synthetic(|_| 0.3);
        let fit = fit_decay_rate(&flat, (0.0, 2.0)).unwrap();
        assert_eq!(fit.lambda, 0.0);
        assert_eq!(fit.r_squared, 1.0);

        assert!(matches!(
            fit_decay_rate(&recs, (0.0, 0.3)),
            Err(DiagnosticsError::InsufficientData { .. })
        ));
        let zero = synthetic(|t| if t > 1.5 { 0.0 } else { 1.0 });
        assert!(matches!(
            fit_decay_rate(&zero, (1.0, 2.0)),
            Err(DiagnosticsError::NonPositiveEntropy { .. })
        ));
    }

    #[test]
    fn audit_passes_at_equilibrium_and_catches_corruption() {
        let spec = MixtureSpec::uniform(3, 1.0, ProductionLaw::Zero).unwrap();
        let g = Grid1D::new(1.0, 4).unwrap();
        let c = field(&[[0.25, 0.25, 0.5]; 4]);
        // w = (log ½, log ½); any ε > 0 shifts the mass, so audit with ε = 0
        let w = entropy_field(&c);
        let reference = mean_composition(&g, &c);
        let rec = DiagnosticsRecord::compute(&spec, &g, &c, &w, &reference, 0.0, 0.0, 0).unwrap();
        let mut next = rec.clone();
        next.time = 0.1;
        let params = AuditParams {
            tau: 0.1,
            eps: 0.0,
            solver_slack: 0.0,
        };
        let prev_state = AuditState { record: &rec, c: &c, w: &w };
        let verdict = audit_step(&spec, &g, &params, 1, prev_state, AuditState { record: &next, c: &c, w: &w }).unwrap();
        assert!(verdict.passed(), "{verdict:?}");
        assert_eq!(verdict.entropy.margin, 0.0);

        next.entropy += 1.0;
        let verdict = audit_step(&spec, &g, &params, 1, prev_state, AuditState { record: &next, c: &c, w: &w }).unwrap();
        assert!(!verdict.entropy.passed);
        assert_eq!(verdict.failures(), vec!["entropy"]);
    }
}
