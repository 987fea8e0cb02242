//! Batch execution of a [`RunConfig`] and emission of CSV/JSON outputs.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::diagnostics::{default_window, fit_decay_rate, pinsker_check, AuditVerdict, DecayFit, UphillEvent};
use crate::mixture::{sample_simplex, MixtureSpec};
use crate::spectral::{certify_a0_spectrum, certify_a_spectrum, symmetric_spectrum, SpectrumReport, DEFAULT_ZERO_TOL_FACTOR};
use crate::state::{ConcentrationField, EntropyField};
use crate::stepper::{run_simulation, StepView, StepperError, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER_ABORT: i32 = 1;
pub const EXIT_AUDIT_FAILURE: i32 = 2;
pub const EXIT_CONFIG_ERROR: i32 = 64;

/// Largest accepted `‖B - Bᵀ‖_max` in certification.
pub const MOBILITY_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest round-trip decimal form, switching to exponent notation for very
/// large or small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn csv_line(values: impl IntoIterator<Item = String>) -> String {
    let mut line = values.into_iter().collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

pub fn timeseries_header(n_species: usize) -> String {
    let mut cols: Vec<String> = ["time", "entropy", "relative_entropy", "dissipation_raw", "dissipation_sqrt"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=n_species).map(|i| format!("mass_{i}")));
    cols.push("min_c".into());
    cols.push("picard_iterations".into());
    csv_line(cols)
}

fn timeseries_row(view: &StepView<'_>) -> String {
    let r = view.record;
    let mut cols = vec![
        fmt_f64(r.time),
        fmt_f64(r.entropy),
        fmt_f64(r.relative_entropy),
        fmt_f64(r.dissipation_raw),
        fmt_f64(r.dissipation_sqrt),
    ];
    cols.extend(r.masses.iter().map(|m| fmt_f64(*m)));
    cols.push(fmt_f64(r.min_c));
    cols.push(r.picard_iterations.to_string());
    csv_line(cols)
}

pub fn snapshot_csv(grid: &crate::grid::Grid1D, c: &ConcentrationField, w: &EntropyField) -> String {
    let ns = c.n_species();
    let mut out = String::new();
    let mut cols = vec!["x".to_string()];
    cols.extend((1..=ns).map(|i| format!("c_{i}")));
    cols.extend((1..ns).map(|i| format!("w_{i}")));
    out.push_str(&csv_line(cols));
    for m in 0..c.cells() {
        let mut cols = vec![fmt_f64(grid.center(m))];
        cols.extend(c.full().row(m).iter().map(|v| fmt_f64(*v)));
        cols.extend(w.values().row(m).iter().map(|v| fmt_f64(*v)));
        out.push_str(&csv_line(cols));
    }
    out
}

/// Smallest margin of each audit check over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstMargins {
    pub entropy: f64,
    pub mass: f64,
    pub bounds: f64,
    pub dissipation: f64,
    pub flux: f64,
}

impl WorstMargins {
    fn of(verdicts: &[AuditVerdict]) -> Option<Self> {
        let min = |f: fn(&AuditVerdict) -> f64| verdicts.iter().map(f).fold(f64::INFINITY, f64::min);
        (!verdicts.is_empty()).then(|| Self {
            entropy: min(|v| v.entropy.margin),
            mass: min(|v| v.mass.margin),
            bounds: min(|v| v.bounds.margin),
            dissipation: min(|v| v.dissipation.margin),
            flux: min(|v| v.flux.margin),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimedUphill {
    pub time: f64,
    pub face: usize,
    /// One-based species index.
    pub species: usize,
    pub product: f64,
}

impl TimedUphill {
    fn new(time: f64, e: UphillEvent) -> Self {
        Self {
            time,
            face: e.face,
            species: e.species + 1,
            product: e.product,
        }
    }
}

/// Contents of `run_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub n_species: usize,
    pub cells: usize,
    pub tau: f64,
    pub eps: f64,
    pub steps: usize,
    pub final_time: f64,
    pub lambda: Option<f64>,
    pub r_squared: Option<f64>,
    pub decay_window: Option<(f64, f64)>,
    pub decay_fit_error: Option<String>,
    pub initial_masses: Vec<f64>,
    pub final_masses: Vec<f64>,
    pub mass_identity_error: f64,
    pub max_mass_drift: f64,
    pub worst_margins: Option<WorstMargins>,
    pub max_flux_relative_residual: f64,
    pub relative_entropy_monotone: bool,
    pub pinsker_holds: bool,
    pub uphill_event: bool,
    pub first_uphill: Option<TimedUphill>,
    pub heat_l2_error: Option<f64>,
    pub clamp_count: usize,
    pub tau_halvings: usize,
    pub total_picard_iterations: usize,
    pub max_picard_iterations: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: RunSummary,
    /// Complete or partial trajectory; `None` when the run failed before the
    /// first record.
    pub trajectory: Option<Trajectory>,
}

#[derive(Serialize)]
struct AuditFile<'a> {
    scenario: &'a str,
    passed: bool,
    steps: &'a [AuditVerdict],
}

struct Emitter<'a> {
    config: &'a RunConfig,
    timeseries: Option<BufWriter<File>>,
    error: Option<RunnerError>,
    pinsker_holds: bool,
}

impl Emitter<'_> {
    fn observe(&mut self, view: StepView<'_>) {
        match pinsker_check(&self.config.grid, view.c, view.reference) {
            Ok(p) if p.holds() => {}
            _ => self.pinsker_holds = false,
        }
        if self.error.is_some() {
            return;
        }
        let dir = &self.config.output_dir;
        if let Some(ts) = self.timeseries.as_mut() {
            if let Err(e) = ts.write_all(timeseries_row(&view).as_bytes()) {
                self.error = Some(io_err(&dir.join("timeseries.csv"))(e));
            }
        }
        let n_steps = self.config.scheme.n_steps();
        if self.config.emit.snapshots
            && (view.step % self.config.snapshot_every == 0 || view.step == n_steps)
        {
            let path = dir.join(format!("snapshot_{:04}.csv", view.step));
            if let Err(e) = fs::write(&path, snapshot_csv(&self.config.grid, view.c, view.w)) {
                self.error = Some(io_err(&path)(e));
            }
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Runs one scenario, writing the configured outputs into `output_dir`.
///
/// Solver aborts and audit failures are reported through the exit code;
/// partial outputs are flushed in both cases.
pub fn run_scenario(config: &RunConfig) -> Result<RunOutcome, RunnerError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let timeseries = if config.emit.timeseries {
        let path = dir.join("timeseries.csv");
        let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        f.write_all(timeseries_header(config.spec.n_species()).as_bytes())
            .map_err(io_err(&path))?;
        Some(f)
    } else {
        None
    };
    if config.emit.certify {
        let report = certify(config, config.certify_samples, config.seed);
        write_json(&dir.join("certify.json"), &report)?;
    }

    let c0 = config.initial_field()?;
    let mut emitter = Emitter {
        config,
        timeseries,
        error: None,
        pinsker_holds: true,
    };
    let result = run_simulation(&config.spec, &config.grid, &config.scheme, &c0, &mut |v| {
        emitter.observe(v)
    });
    if let Some(mut ts) = emitter.timeseries.take() {
        ts.flush().map_err(io_err(&dir.join("timeseries.csv")))?;
    }
    if let Some(e) = emitter.error.take() {
        return Err(e);
    }

    let (exit_code, status, error, trajectory) = match result {
        Ok(t) => {
            let code = if t.all_audits_passed() { EXIT_OK } else { EXIT_AUDIT_FAILURE };
            let status = if code == EXIT_OK { "ok" } else { "audit_failure" };
            (code, status, None, Some(t))
        }
        Err(e @ StepperError::AuditViolation { .. }) => {
            let msg = e.to_string();
            let t = match e {
                StepperError::AuditViolation { trajectory, .. } => *trajectory,
                _ => unreachable!(),
            };
            (EXIT_AUDIT_FAILURE, "audit_failure", Some(msg), Some(t))
        }
        Err(e) => {
            let msg = e.to_string();
            let t = match e {
                StepperError::Aborted { trajectory, .. } => Some(*trajectory),
                _ => None,
            };
            (EXIT_SOLVER_ABORT, "solver_abort", Some(msg), t)
        }
    };

    if config.emit.audit {
        let verdicts = trajectory.as_ref().map(|t| t.verdicts.as_slice()).unwrap_or(&[]);
        write_json(
            &dir.join("audit.json"),
            &AuditFile {
                scenario: &config.scenario,
                passed: exit_code == EXIT_OK,
                steps: verdicts,
            },
        )?;
    }

    let summary = summarize(config, exit_code, status, error, trajectory.as_ref(), emitter.pinsker_holds);
    write_json(&dir.join("run_summary.json"), &summary)?;
    Ok(RunOutcome {
        exit_code,
        summary,
        trajectory,
    })
}

fn summarize(
    config: &RunConfig,
    exit_code: i32,
    status: &'static str,
    error: Option<String>,
    trajectory: Option<&Trajectory>,
    pinsker_holds: bool,
) -> RunSummary {
    let mut s = RunSummary {
        scenario: config.scenario.clone(),
        status,
        exit_code,
        error,
        n_species: config.spec.n_species(),
        cells: config.grid.cells(),
        tau: config.scheme.tau,
        eps: config.scheme.eps,
        steps: 0,
        final_time: 0.0,
        lambda: None,
        r_squared: None,
        decay_window: None,
        decay_fit_error: None,
        initial_masses: Vec::new(),
        final_masses: Vec::new(),
        mass_identity_error: 0.0,
        max_mass_drift: 0.0,
        worst_margins: None,
        max_flux_relative_residual: 0.0,
        relative_entropy_monotone: true,
        pinsker_holds,
        uphill_event: false,
        first_uphill: None,
        heat_l2_error: None,
        clamp_count: 0,
        tau_halvings: 0,
        total_picard_iterations: 0,
        max_picard_iterations: 0,
    };
    let Some(t) = trajectory else {
        return s;
    };
    let last = t.records.last().expect("initial record");
    s.steps = t.verdicts.len();
    s.final_time = last.time;
    s.initial_masses = t.initial_masses.clone();
    s.final_masses = last.masses.clone();
    s.mass_identity_error = t.mass_identity_error;
    s.max_mass_drift = t.max_mass_drift;
    s.worst_margins = WorstMargins::of(&t.verdicts);
    s.max_flux_relative_residual = t.max_flux_residual;
    let slack = config
        .scheme
        .solver_slack(config.spec.n_reduced(), config.grid.cells());
    s.relative_entropy_monotone = t
        .records
        .windows(2)
        .all(|w| w[1].relative_entropy <= w[0].relative_entropy + slack);
    s.uphill_event = t.uphill.is_some();
    s.first_uphill = t.uphill.map(|(time, e)| TimedUphill::new(time, e));
    s.heat_l2_error = config.heat_l2_error(&t.final_c, last.time);
    s.clamp_count = t.clamp_count;
    s.tau_halvings = t.tau_halvings;
    s.total_picard_iterations = t.records.iter().map(|r| r.picard_iterations).sum();
    s.max_picard_iterations = t.records.iter().map(|r| r.picard_iterations).max().unwrap_or(0);

    let window = config.decay_window.unwrap_or_else(|| default_window(&t.records));
    s.decay_window = Some(window);
    match fit_decay_rate(&t.records, window) {
        Ok(DecayFit { lambda, r_squared, .. }) => {
            s.lambda = Some(lambda);
            s.r_squared = Some(r_squared);
        }
        Err(e) => s.decay_fit_error = Some(e.to_string()),
    }
    s
}

/// Symmetry and definiteness of `B(c)` at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MobilityCheck {
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub spd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifySample {
    pub index: usize,
    pub c: Vec<f64>,
    pub a_spectrum: Option<SpectrumReport>,
    pub a0_spectrum: Option<SpectrumReport>,
    pub mobility: Option<MobilityCheck>,
    pub passed: bool,
    pub error: Option<String>,
}

/// Contents of `certify.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub scenario: String,
    pub seed: u64,
    pub samples: usize,
    pub failures: usize,
    pub passed: bool,
    pub reports: Vec<CertifySample>,
}

impl CertifyReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_AUDIT_FAILURE
        }
    }
}

fn certify_state(spec: &MixtureSpec, index: usize, c: &crate::mixture::ConcVector) -> CertifySample {
    let tol = DEFAULT_ZERO_TOL_FACTOR * spec.big_delta();
    let mut sample = CertifySample {
        index,
        c: c.full().iter().copied().collect(),
        a_spectrum: None,
        a0_spectrum: None,
        mobility: None,
        passed: false,
        error: None,
    };
    let mut errors = String::new();
    match certify_a_spectrum(spec, c, tol) {
        Ok(r) => sample.a_spectrum = Some(r),
        Err(e) => {
            let _ = write!(errors, "A: {e}; ");
        }
    }
    match certify_a0_spectrum(spec, c, tol) {
        Ok(r) => sample.a0_spectrum = Some(r),
        Err(e) => {
            let _ = write!(errors, "A0: {e}; ");
        }
    }
    match spec.mobility(c) {
        Ok(b) => {
            let symmetry_residual = (&b - b.transpose()).amax();
            let sym = (&b + b.transpose()) * 0.5;
            match symmetric_spectrum(&sym) {
                Ok(eig) => {
                    let min_eigenvalue = eig.first().copied().unwrap_or(f64::NAN);
                    sample.mobility = Some(MobilityCheck {
                        symmetry_residual,
                        min_eigenvalue,
                        spd: symmetry_residual <= MOBILITY_SYMMETRY_TOL && min_eigenvalue > 0.0,
                    });
                }
                Err(e) => {
                    let _ = write!(errors, "B: {e}; ");
                }
            }
        }
        Err(e) => {
            let _ = write!(errors, "B: {e}; ");
        }
    }
    sample.passed = errors.is_empty()
        && sample.a_spectrum.as_ref().is_some_and(SpectrumReport::certifies_friction)
        && sample.a0_spectrum.as_ref().is_some_and(SpectrumReport::certifies_reduced)
        && sample.mobility.is_some_and(|m| m.spd);
    if !errors.is_empty() {
        sample.error = Some(errors.trim_end_matches("; ").to_string());
    }
    sample
}

/// Checks the friction spectrum, the reduced spectrum and `B` at `samples`
/// uniformly random interior states of the configured mixture.
pub fn certify(config: &RunConfig, samples: usize, seed: u64) -> CertifyReport {
    certify_spec(&config.spec, &config.scenario, samples, seed)
}

pub fn certify_spec(spec: &MixtureSpec, scenario: &str, samples: usize, seed: u64) -> CertifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports: Vec<CertifySample> = (0..samples)
        .map(|k| {
            let c = sample_simplex(&mut rng, spec.n_species());
            certify_state(spec, k, &c)
        })
        .collect();
    let failures = reports.iter().filter(|r| !r.passed).count();
    CertifyReport {
        scenario: scenario.to_string(),
        seed,
        samples,
        failures,
        passed: failures == 0,
        reports,
    }
}

pub fn write_certify_report(report: &CertifyReport, dir: &Path) -> Result<PathBuf, RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("certify.json");
    write_json(&path, report)?;
    Ok(path)
}
