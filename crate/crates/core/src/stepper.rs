//! Implicit Euler time stepping in entropy variables.
//!
//! Each step solves the regularized elliptic problem
//!
//! ```text
//! (h/τ)(c'(w) - c'_prev)·v + Σ_faces (1/h) Δv·B̄ Δw + εh[(Lw)·(Lv) + w·v] = h r'(c(w))·v
//! ```
//!
//! by Picard iteration with the mobility frozen at the previous iterate `w̄`.
//! With [`Linearization::MassLinearized`] the time-derivative term is
//! additionally expanded to first order around `w̄`, `c'(w) ≈ c'(w̄) + H⁻¹(w̄)(w - w̄)`;
//! this leaves the fixed points unchanged but keeps the iteration contractive
//! for small `τε`. [`Linearization::Frozen`] keeps the whole time-derivative
//! term on the right-hand side.

use log::{debug, warn};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::banded::{solve_spd, BandedError, BandedMatrix};
use crate::diagnostics::{
    audit_step, cell_mobilities, face_mobility, masses, mean_composition, AuditParams, AuditState,
    AuditVerdict, DiagnosticsError, DiagnosticsRecord, UphillEvent,
};
use crate::grid::{Field, Grid1D};
use crate::mixture::{inverse_hessian, MixtureError, MixtureSpec};
use crate::state::{ConcentrationField, EntropyField};

/// Target relative residual of every linear solve.
pub const LINEAR_RTOL: f64 = 1e-12;
/// Largest tolerated `‖S - Sᵀ‖_max` of an assembled system.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Damping restarts per step.
pub const MAX_DAMPING_RESTARTS: usize = 3;
/// Halvings of τ allowed for a single failing step.
pub const MAX_TAU_HALVINGS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    #[default]
    MassLinearized,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    #[default]
    Enforce,
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeParams {
    pub tau: f64,
    pub eps: f64,
    /// Max-norm threshold on the concentration increment `c(w) - c(w̄)`.
    pub picard_tol: f64,
    pub picard_max: usize,
    pub damping_theta: f64,
    pub eta_floor: f64,
    pub t_end: f64,
    pub linearization: Linearization,
    pub audit: AuditMode,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            eps: 1e-8,
            picard_tol: 1e-10,
            picard_max: 200,
            damping_theta: 1.0,
            eta_floor: 1e-8,
            t_end: 1.0,
            linearization: Linearization::MassLinearized,
            audit: AuditMode::Enforce,
        }
    }
}

impl SchemeParams {
    pub fn validate(&self, n_species: usize) -> Result<(), StepperError> {
        let bad = |name: &'static str, reason: &str| {
            Err(StepperError::InvalidParams {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau", "must be positive");
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad("eps", "must be nonnegative");
        }
        if self.linearization == Linearization::Frozen && self.eps == 0.0 {
            return bad("eps", "must be positive for the frozen linearization");
        }
        if !(self.picard_tol.is_finite() && self.picard_tol > 0.0) {
            return bad("picard_tol", "must be positive");
        }
        if self.picard_max == 0 {
            return bad("picard_max", "must be at least 1");
        }
        if !(self.damping_theta > 0.0 && self.damping_theta <= 1.0) {
            return bad("damping_theta", "must lie in (0, 1]");
        }
        if !(self.eta_floor > 0.0 && self.eta_floor * (n_species as f64) < 1.0) {
            return bad("eta_floor", "must lie in (0, 1/n_species)");
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad("t_end", "must be finite and nonnegative");
        }
        Ok(())
    }

    /// `10 · picard_tol · N M`, the allowance for inexact nonlinear solves.
    /// Number of steps to `t_end`; the last one is shortened to land on it.
    pub fn n_steps(&self) -> usize {
        if self.t_end > 0.0 {
            ((self.t_end / self.tau) - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        }
    }

    pub fn solver_slack(&self, n_reduced: usize, cells: usize) -> f64 {
        10.0 * self.picard_tol * (n_reduced * cells) as f64
    }
}

#[derive(Debug, Error)]
pub enum StepperError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("inadmissible initial data: {0}")]
    InadmissibleInitialData(MixtureError),
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(#[from] BandedError),
    #[error("assembled system is not symmetric (‖S - Sᵀ‖ = {0:e})")]
    AsymmetricSystem(f64),
    #[error("Picard iteration did not converge (θ = {theta}, last increments {tail:?})")]
    NonlinearDivergence {
        theta: f64,
        increments: Vec<f64>,
        tail: Vec<f64>,
    },
    #[error("field shapes do not match the grid or mixture")]
    DimensionMismatch,
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("run aborted at step {step} (t = {time}): {source}")]
    Aborted {
        step: usize,
        time: f64,
        source: Box<StepperError>,
        trajectory: Box<Trajectory>,
    },
    #[error("audit failed at step {step} (t = {time}): {failures:?}")]
    AuditViolation {
        step: usize,
        time: f64,
        failures: Vec<&'static str>,
        trajectory: Box<Trajectory>,
    },
}

impl StepperError {
    /// Partial trajectory carried by an abort.
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            StepperError::Aborted { trajectory, .. }
            | StepperError::AuditViolation { trajectory, .. } => Some(trajectory),
            _ => None,
        }
    }
}

fn divergence(theta: f64, increments: Vec<f64>) -> StepperError {
    let tail = increments[increments.len().saturating_sub(5)..].to_vec();
    StepperError::NonlinearDivergence {
        theta,
        increments,
        tail,
    }
}

/// Blends every cell towards the barycenter, `c̃_i = η + (1 - (N+1)η) c_i`
/// for all `N+1` species, so that `c̃_i ≥ η` and `Σ_{i≤N} c̃_i ≤ 1 - η`.
pub fn regularize_initial(
    c0: &ConcentrationField,
    eta: f64,
) -> Result<ConcentrationField, StepperError> {
    let ns = c0.n_species();
    if !(eta > 0.0 && eta * (ns as f64) < 1.0) {
        return Err(StepperError::InvalidParams {
            name: "eta_floor",
            reason: "must lie in (0, 1/n_species)".into(),
        });
    }
    let scale = 1.0 - ns as f64 * eta;
    let blended = c0.full().map(|x| eta + scale * x);
    ConcentrationField::from_field(blended).map_err(StepperError::InadmissibleInitialData)
}

#[inline]
fn idx(n: usize, cell: usize, i: usize) -> usize {
    cell * n + i
}

/// Assembled per-iteration system `S w = b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: BandedMatrix,
    pub rhs: Vec<f64>,
}

/// Entries of the pentadiagonal `L²` of the Neumann Laplacian, as
/// `(row, col, value)` with `|row - col| ≤ 2`.
fn laplacian_squared(grid: &Grid1D) -> Vec<(usize, usize, f64)> {
    let m = grid.cells();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let row = |j: usize| -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(3);
        let mut diag = 0.0;
        if j > 0 {
            out.push((j - 1, inv_h2));
            diag -= inv_h2;
        }
        if j + 1 < m {
            out.push((j + 1, inv_h2));
            diag -= inv_h2;
        }
        out.push((j, diag));
        out
    };
    let mut dense_band = vec![[0.0f64; 5]; m];
    for j in 0..m {
        let r = row(j);
        for &(a, la) in &r {
            for &(b, lb) in &r {
                // L symmetric: (L²)_{ab} = Σ_j L_aj L_jb
                dense_band[a][b + 2 - a] += la * lb;
            }
        }
    }
    let mut out = Vec::with_capacity(5 * m);
    for (a, band) in dense_band.iter().enumerate() {
        for (k, &v) in band.iter().enumerate() {
            if v != 0.0 {
                out.push((a, a + k - 2, v));
            }
        }
    }
    out
}

pub fn assemble_linear_system(
    spec: &MixtureSpec,
    grid: &Grid1D,
    params: &SchemeParams,
    w_bar: &EntropyField,
    c_prev: &ConcentrationField,
) -> Result<LinearSystem, StepperError> {
    let n = spec.n_reduced();
    let cells = grid.cells();
    if w_bar.cells() != cells
        || c_prev.cells() != cells
        || w_bar.n_reduced() != n
        || c_prev.n_reduced() != n
    {
        return Err(StepperError::DimensionMismatch);
    }
    let h = grid.spacing();
    let mass_coef = h / params.tau;
    let c_bar = w_bar.to_concentrations();
    let mobility = cell_mobilities(spec, &c_bar)?;
    let mut matrix = BandedMatrix::zeros(n * cells, 3 * n - 1);

    for face in 1..cells {
        let b = face_mobility(&mobility[face - 1], &mobility[face]) / h;
        let (l, r) = (face - 1, face);
        for i in 0..n {
            for j in 0..n {
                let v = b[(i, j)];
                matrix.add(idx(n, l, i), idx(n, l, j), v);
                matrix.add(idx(n, r, i), idx(n, r, j), v);
                matrix.add(idx(n, l, i), idx(n, r, j), -v);
                matrix.add(idx(n, r, i), idx(n, l, j), -v);
            }
        }
    }

    if params.eps > 0.0 {
        let reg = params.eps * h;
        for (a, b, v) in laplacian_squared(grid) {
            let q = if a == b { v + 1.0 } else { v };
            for i in 0..n {
                matrix.add(idx(n, a, i), idx(n, b, i), reg * q);
            }
        }
    }

    let mut rhs = vec![0.0; n * cells];
    for m in 0..cells {
        let cm = c_bar.cell(m);
        let production = spec.production_rates(&cm);
        for i in 0..n {
            rhs[idx(n, m, i)] =
                -mass_coef * (cm.full()[i] - c_prev.get(m, i)) + h * production[i];
        }
        if params.linearization == Linearization::MassLinearized {
            let hinv = inverse_hessian(&cm);
            let wm = DVector::from_column_slice(w_bar.values().row(m));
            let shifted = &hinv * wm;
            for i in 0..n {
                rhs[idx(n, m, i)] += mass_coef * shifted[i];
                for j in 0..n {
                    matrix.add(idx(n, m, i), idx(n, m, j), mass_coef * hinv[(i, j)]);
                }
            }
        }
    }

    let asym = matrix.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(StepperError::AsymmetricSystem(asym));
    }
    Ok(LinearSystem { matrix, rhs })
}

/// One Picard update.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Solution of the system frozen at `w̄`.
    pub w_solve: EntropyField,
    /// `(1 - θ) w̄ + θ w_solve`.
    pub w_next: EntropyField,
    /// `max |c(w_solve) - c(w̄)|` over all `N+1` species.
    pub increment: f64,
    /// `max |w_solve - w̄|`.
    pub w_increment: f64,
    pub linear_residual: f64,
}

pub fn picard_step(
    spec: &MixtureSpec,
    grid: &Grid1D,
    params: &SchemeParams,
    w_bar: &EntropyField,
    c_prev: &ConcentrationField,
) -> Result<PicardOutcome, StepperError> {
    let system = assemble_linear_system(spec, grid, params, w_bar, c_prev)?;
    let solution = solve_spd(&system.matrix, &system.rhs, LINEAR_RTOL)?;
    let n = w_bar.n_reduced();
    let cells = w_bar.cells();
    let w_solve = Field::from_vec(cells, n, solution.x);
    let theta = params.damping_theta;
    let bar = w_bar.values().as_slice();
    let w_increment = w_solve
        .as_slice()
        .iter()
        .zip(bar)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let next = if theta == 1.0 {
        w_solve.clone()
    } else {
        let data = w_solve
            .as_slice()
            .iter()
            .zip(bar)
            .map(|(s, b)| (1.0 - theta) * b + theta * s)
            .collect();
        Field::from_vec(cells, n, data)
    };
    let w_solve = EntropyField::from_field(w_solve)?;
    let increment = w_solve
        .to_concentrations()
        .full()
        .max_abs_diff(w_bar.to_concentrations().full());
    Ok(PicardOutcome {
        w_solve,
        w_next: EntropyField::from_field(next)?,
        increment,
        w_increment,
        linear_residual: solution.relative_residual,
    })
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub w_new: EntropyField,
    pub iterations: usize,
    pub final_increment: f64,
    pub linear_residual: f64,
    /// Damping in force when the iteration converged.
    pub damping_theta: f64,
    pub increments: Vec<f64>,
}

fn growing(history: &[f64]) -> bool {
    let k = history.len();
    k >= 4 && history[k - 1] > history[k - 2] && history[k - 2] > history[k - 3] && history[k - 3] > history[k - 4]
}

/// Iterates [`picard_step`] from `w̄ = w_prev` until the concentration
/// increment is at most `picard_tol`. Near the boundary of the simplex `w` is
/// only determined to about `u / min c` in double precision, so the
/// increment is measured in `c`.
/// Three consecutive growing increments halve the damping and restart,
/// at most [`MAX_DAMPING_RESTARTS`] times.
pub fn advance_step(
    spec: &MixtureSpec,
    grid: &Grid1D,
    params: &SchemeParams,
    w_prev: &EntropyField,
) -> Result<StepResult, StepperError> {
    if !w_prev.is_finite() {
        return Err(MixtureError::NonFiniteEntropyVariables.into());
    }
    let c_prev = w_prev.to_concentrations();
    let mut local = *params;
    for restart in 0..=MAX_DAMPING_RESTARTS {
        let mut w_bar = w_prev.clone();
        let mut history = Vec::new();
        let mut diverged = false;
        for iteration in 1..=local.picard_max {
            let out = picard_step(spec, grid, &local, &w_bar, &c_prev)?;
            history.push(out.increment);
            if out.increment <= local.picard_tol {
                return Ok(StepResult {
                    w_new: out.w_solve,
                    iterations: iteration,
                    final_increment: out.increment,
                    linear_residual: out.linear_residual,
                    damping_theta: local.damping_theta,
                    increments: history,
                });
            }
            if !out.increment.is_finite() || growing(&history) {
                diverged = true;
                break;
            }
            w_bar = out.w_next;
        }
        if !diverged || restart == MAX_DAMPING_RESTARTS {
            return Err(divergence(local.damping_theta, history));
        }
        debug!(
            "Picard increments growing at θ = {}; restarting with θ = {}",
            local.damping_theta,
            local.damping_theta / 2.0
        );
        local.damping_theta /= 2.0;
    }
    unreachable!("the last restart always returns")
}

/// Everything a hook sees for one accepted state.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub step: usize,
    pub record: &'a DiagnosticsRecord,
    pub verdict: Option<&'a AuditVerdict>,
    pub c: &'a ConcentrationField,
    pub w: &'a EntropyField,
    /// Spatial mean of the regularized initial state.
    pub reference: &'a [f64],
}

/// Records and audit verdicts of a (possibly partial) run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub verdicts: Vec<AuditVerdict>,
    /// Spatial mean of the regularized initial state.
    pub reference: Vec<f64>,
    pub initial_masses: Vec<f64>,
    /// `max_{k,i} |∫c_iᵏ - (∫c_i⁰ - ετ Σ_j ∫w_iʲ + τ Σ_j ∫r_iʲ)|`.
    pub mass_identity_error: f64,
    /// `max_{k,i} |∫c_iᵏ - ∫c_i⁰|`.
    pub max_mass_drift: f64,
    pub tau_halvings: usize,
    /// Number of times a concentration was clipped into the simplex; the
    /// scheme never clips, so this stays zero.
    pub clamp_count: usize,
    pub max_flux_residual: f64,
    /// First uphill event, with its time.
    pub uphill: Option<(f64, UphillEvent)>,
    pub final_c: ConcentrationField,
    pub final_w: EntropyField,
}

impl Trajectory {
    pub fn all_audits_passed(&self) -> bool {
        self.verdicts.iter().all(AuditVerdict::passed)
    }
}

struct Marcher<'a> {
    spec: &'a MixtureSpec,
    grid: &'a Grid1D,
    params: SchemeParams,
    traj: Trajectory,
    expected_masses: Vec<f64>,
    step: usize,
}

impl Marcher<'_> {
    fn abort(self, time: f64, source: StepperError) -> StepperError {
        StepperError::Aborted {
            step: self.step + 1,
            time,
            source: Box::new(source),
            trajectory: Box::new(self.traj),
        }
    }

    /// Records and audits an accepted state; returns the failed checks.
    fn accept(
        &mut self,
        result: StepResult,
        time: f64,
        tau: f64,
        hook: &mut dyn FnMut(StepView<'_>),
    ) -> Result<Vec<&'static str>, StepperError> {
        let (spec, grid) = (self.spec, self.grid);
        let w = result.w_new;
        let c = w.to_concentrations();
        let record = DiagnosticsRecord::compute(
            spec,
            grid,
            &c,
            &w,
            &self.traj.reference,
            time,
            tau,
            result.iterations,
        )?;
        let prev_record = self.traj.records.last().expect("initial record");
        let audit_params = AuditParams {
            tau,
            eps: self.params.eps,
            solver_slack: self.params.solver_slack(spec.n_reduced(), grid.cells()),
        };
        let verdict = audit_step(
            spec,
            grid,
            &audit_params,
            self.step + 1,
            AuditState {
                record: prev_record,
                c: &self.traj.final_c,
                w: &self.traj.final_w,
            },
            AuditState {
                record: &record,
                c: &c,
                w: &w,
            },
        )?;

        let h = grid.spacing();
        let n = spec.n_reduced();
        let mut w_int: Vec<f64> = (0..n).map(|i| w.values().column(i).sum::<f64>() * h).collect();
        w_int.push(-w_int.iter().sum::<f64>());
        let mut production = vec![0.0; n + 1];
        if !spec.production().is_zero() {
            for m in 0..grid.cells() {
                for (acc, r) in production.iter_mut().zip(spec.production_rates(&c.cell(m)).iter()) {
                    *acc += r * h;
                }
            }
        }
        for i in 0..=n {
            self.expected_masses[i] += -self.params.eps * tau * w_int[i] + tau * production[i];
            let err = (record.masses[i] - self.expected_masses[i]).abs();
            self.traj.mass_identity_error = self.traj.mass_identity_error.max(err);
            let drift = (record.masses[i] - self.traj.initial_masses[i]).abs();
            self.traj.max_mass_drift = self.traj.max_mass_drift.max(drift);
        }
        self.traj.max_flux_residual = self.traj.max_flux_residual.max(verdict.flux_relative_residual);
        if self.traj.uphill.is_none() {
            if let Some(event) = verdict.uphill {
                self.traj.uphill = Some((time, event));
            }
        }

        self.step += 1;
        hook(StepView {
            step: self.step,
            record: &record,
            verdict: Some(&verdict),
            c: &c,
            w: &w,
            reference: &self.traj.reference,
        });
        let failures = verdict.failures();
        self.traj.records.push(record);
        self.traj.verdicts.push(verdict);
        self.traj.final_c = c;
        self.traj.final_w = w;
        Ok(failures)
    }
}

/// Regularizes `c0`, then marches to `t_end` with constant `τ`, auditing
/// every accepted step. A step whose Picard iteration diverges is retried
/// as `2, 4, …, 32` substeps before the run is aborted.
pub fn run_simulation(
    spec: &MixtureSpec,
    grid: &Grid1D,
    params: &SchemeParams,
    c0: &ConcentrationField,
    hook: &mut dyn FnMut(StepView<'_>),
) -> Result<Trajectory, StepperError> {
    params.validate(spec.n_species())?;
    if c0.cells() != grid.cells() || c0.n_species() != spec.n_species() {
        return Err(StepperError::DimensionMismatch);
    }
    let regularized = regularize_initial(c0, params.eta_floor)?;
    let w0 = regularized
        .to_entropy()
        .map_err(StepperError::InadmissibleInitialData)?;
    let c_init = w0.to_concentrations();
    let mut reference = mean_composition(grid, &c_init);
    let total: f64 = reference.iter().sum();
    reference.iter_mut().for_each(|x| *x /= total);
    let record0 = DiagnosticsRecord::compute(spec, grid, &c_init, &w0, &reference, 0.0, 0.0, 0)?;
    let initial_masses = masses(grid, &c_init);
    hook(StepView {
        step: 0,
        record: &record0,
        verdict: None,
        c: &c_init,
        w: &w0,
        reference: &reference,
    });

    let mut marcher = Marcher {
        spec,
        grid,
        params: *params,
        traj: Trajectory {
            records: vec![record0],
            verdicts: Vec::new(),
            reference,
            initial_masses: initial_masses.clone(),
            mass_identity_error: 0.0,
            max_mass_drift: 0.0,
            tau_halvings: 0,
            clamp_count: 0,
            max_flux_residual: 0.0,
            uphill: None,
            final_c: c_init,
            final_w: w0,
        },
        expected_masses: initial_masses,
        step: 0,
    };

    let tau = params.tau;
    let n_steps = params.n_steps();
    let full_units: u64 = 1 << MAX_TAU_HALVINGS;
    for k in 1..=n_steps {
        let t_start = (k - 1) as f64 * tau;
        let t_stop = if k == n_steps { params.t_end } else { k as f64 * tau };
        let interval = t_stop - t_start;
        let mut done: u64 = 0;
        let mut level: u32 = 0;
        while done < full_units {
            let units = full_units >> level;
            let sub_tau = interval * units as f64 / full_units as f64;
            let mut local = *params;
            local.tau = sub_tau;
            match advance_step(spec, grid, &local, &marcher.traj.final_w) {
                Ok(result) => {
                    done += units;
                    let time = if done == full_units {
                        t_stop
                    } else {
                        t_start + interval * done as f64 / full_units as f64
                    };
                    let failures = match marcher.accept(result, time, sub_tau, hook) {
                        Ok(f) => f,
                        Err(e) => return Err(marcher.abort(time, e)),
                    };
                    if !failures.is_empty() {
                        match params.audit {
                            AuditMode::Enforce => {
                                return Err(StepperError::AuditViolation {
                                    step: marcher.step,
                                    time,
                                    failures,
                                    trajectory: Box::new(marcher.traj),
                                })
                            }
                            AuditMode::Warn => {
                                warn!("audit failed at step {} (t = {time}): {failures:?}", marcher.step)
                            }
                        }
                    }
                }
                Err(err @ StepperError::NonlinearDivergence { .. }) if level < MAX_TAU_HALVINGS => {
                    debug!("step {k} diverged ({err}); halving τ");
                    level += 1;
                    marcher.traj.tau_halvings += 1;
                }
                Err(err) => {
                    let time = t_start + interval * done as f64 / full_units as f64;
                    return Err(marcher.abort(time, err));
                }
            }
        }
    }
    Ok(marcher.traj)
}
