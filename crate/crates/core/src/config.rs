//! Line-oriented `key=value` run configuration and the built-in presets.
//!
//! Layers are merged as built-in defaults < preset < config file <
//! command-line overrides. Blank lines and text after `#` are ignored;
//! unknown keys are errors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::{Field, Grid1D};
use crate::mixture::{ConcVector, MixtureSpec, ProductionLaw, Reaction, ReactionTable};
use crate::state::ConcentrationField;
use crate::stepper::{AuditMode, Linearization, SchemeParams, StepperError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("invalid value for {key}: {reason}")]
    Validation { key: String, reason: String },
    #[error("unknown preset {0:?} (available: heat_check, ternary_uphill, quaternary_reaction)")]
    UnknownPreset(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Every accepted key with its documentation, in `--help` order.
pub const KEYS: &[(&str, &str)] = &[
    ("scenario", "preset to start from, or a free-form name (default: custom)"),
    ("species", "number of species N+1, at least 3 (required unless a preset sets it)"),
    ("D", "Maxwell-Stefan diffusivities as the upper triangle in row-major order, or one value for all pairs (required unless a preset sets it)"),
    ("production", "zero | quaternary | custom (default: zero)"),
    ("reaction", "custom law entry `reactants|products|k_f|k_b`, stoichiometries as comma lists over all species; repeatable"),
    ("length", "domain length L (default: 1)"),
    ("cells", "number of cells M (default: 128)"),
    ("tau", "time step (default: 1e-3)"),
    ("eps", "regularization strength ε (default: 1e-8)"),
    ("picard_tol", "Picard threshold on the concentration increment (default: 1e-10)"),
    ("picard_max", "Picard iteration budget per step (default: 200)"),
    ("damping_theta", "initial Picard damping in (0, 1] (default: 1)"),
    ("eta_floor", "initial-data floor η in (0, 1/(N+1)) (default: 1e-8)"),
    ("t_end", "final time (default: 1)"),
    ("initial", "uniform:c1,..,cN+1 | step:LEFT/RIGHT | cosine:BASE/AMP (default: uniform barycenter)"),
    ("linearization", "mass | frozen (default: mass)"),
    ("audit", "enforce | warn (default: enforce)"),
    ("output_dir", "directory for output files (default: out)"),
    ("emit", "comma list of timeseries, snapshots, audit_json, certify_json (default: timeseries,audit_json)"),
    ("snapshot_every", "steps between snapshots (default: 100)"),
    ("certify_samples", "random states checked when certify is emitted (default: 100)"),
    ("decay_window", "t0,t1 window of the decay fit (default: second half of the run)"),
    ("seed", "seed of the certification sampler (default: 1)"),
];

pub const PRESET_NAMES: &[&str] = &["heat_check", "ternary_uphill", "quaternary_reaction"];

/// Configuration text of a built-in preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "heat_check" => Some(
            "# equal diffusivities: every species solves the heat equation\n\
             scenario=heat_check\n\
             species=3\n\
             D=1\n\
             cells=128\n\
             tau=1e-3\n\
             eps=1e-8\n\
             t_end=0.1\n\
             initial=cosine:0.4,0.3,0.3/0.1,-0.05,-0.05\n",
        ),
        "ternary_uphill" => Some(
            "# two half-domains of different composition; species 2 diffuses uphill\n\
             scenario=ternary_uphill\n\
             species=3\n\
             D=0.0833,0.680,0.168\n\
             cells=128\n\
             tau=1e-3\n\
             eps=1e-8\n\
             t_end=2\n\
             initial=step:0,0.50086,0.49914/0.50121,0.49879,0\n\
             decay_window=1,2\n",
        ),
        "quaternary_reaction" => Some(
            "# reversible reaction X1 + X3 <-> X2 + X4 from a uniform off-equilibrium state\n\
             scenario=quaternary_reaction\n\
             species=5\n\
             D=1,2,1,1,1,2,1,1,1,1\n\
             production=quaternary\n\
             cells=128\n\
             tau=1e-3\n\
             eps=1e-8\n\
             t_end=1\n\
             initial=uniform:0.1,0.2,0.3,0.2,0.2\n",
        ),
        _ => None,
    }
}

/// Initial concentrations, all `N+1` species given explicitly.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Uniform(Vec<f64>),
    /// `left` on `x < L/2`, `right` elsewhere.
    Step { left: Vec<f64>, right: Vec<f64> },
    /// `base + amp cos(π x / L)`.
    Cosine { base: Vec<f64>, amp: Vec<f64> },
}

impl InitialData {
    pub fn field(&self, grid: &Grid1D) -> Result<ConcentrationField, ConfigError> {
        let cells: Result<Vec<ConcVector>, _> = (0..grid.cells())
            .map(|m| {
                let x = grid.center(m);
                let v: Vec<f64> = match self {
                    InitialData::Uniform(c) => c.clone(),
                    InitialData::Step { left, right } => {
                        if x < 0.5 * grid.length() {
                            left.clone()
                        } else {
                            right.clone()
                        }
                    }
                    InitialData::Cosine { base, amp } => {
                        let k = (PI * x / grid.length()).cos();
                        base.iter().zip(amp).map(|(b, a)| b + a * k).collect()
                    }
                };
                ConcVector::from_full(&v)
            })
            .collect();
        cells
            .map(|c| ConcentrationField::from_cells(&c))
            .map_err(|e| invalid("initial", e.to_string()))
    }

    /// Exact solution of the equal-diffusivity problem for cosine data,
    /// after the same affine regularization the stepper applies.
    pub fn heat_solution(
        &self,
        grid: &Grid1D,
        diffusivity: f64,
        eta: f64,
        t: f64,
    ) -> Option<Field> {
        let InitialData::Cosine { base, amp } = self else {
            return None;
        };
        let ns = base.len();
        let scale = 1.0 - ns as f64 * eta;
        let decay = (-diffusivity * PI * PI * t / (grid.length() * grid.length())).exp();
        Some(Field::from_fn(grid.cells(), ns, |m, i| {
            let k = (PI * grid.center(m) / grid.length()).cos();
            eta + scale * (base[i] + amp[i] * decay * k)
        }))
    }

    fn n_species(&self) -> usize {
        match self {
            InitialData::Uniform(c) => c.len(),
            InitialData::Step { left, .. } => left.len(),
            InitialData::Cosine { base, .. } => base.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitFlags {
    pub timeseries: bool,
    pub snapshots: bool,
    pub audit: bool,
    pub certify: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            timeseries: true,
            snapshots: false,
            audit: true,
            certify: false,
        }
    }
}

/// Fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: String,
    pub spec: MixtureSpec,
    pub grid: Grid1D,
    pub scheme: SchemeParams,
    pub initial: InitialData,
    pub output_dir: PathBuf,
    pub emit: EmitFlags,
    pub snapshot_every: usize,
    pub certify_samples: usize,
    pub decay_window: Option<(f64, f64)>,
    pub seed: u64,
}

/// Where the configuration layers come from.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources<'a> {
    pub preset: Option<&'a str>,
    /// `(name, text)` of the configuration file.
    pub file: Option<(&'a str, &'a str)>,
    /// `key=value` strings, later ones win.
    pub overrides: &'a [String],
}

type Layer = BTreeMap<String, Vec<String>>;

fn parse_line(origin: &str, line_no: usize, raw: &str) -> Result<Option<(String, String)>, ConfigError> {
    let content = raw.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let err = |message: String| ConfigError::Parse {
        origin: origin.to_string(),
        line: line_no,
        message,
    };
    let (key, value) = content
        .split_once('=')
        .ok_or_else(|| err(format!("expected key=value, found {content:?}")))?;
    let key = key.trim();
    if !KEYS.iter().any(|(k, _)| *k == key) {
        return Err(err(format!("unknown key {key:?}")));
    }
    let value = value.trim();
    if value.is_empty() {
        return Err(err(format!("empty value for {key}")));
    }
    Ok(Some((key.to_string(), value.to_string())))
}

fn parse_layer<'a>(
    origin: &str,
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Layer, ConfigError> {
    let mut layer = Layer::new();
    for (line_no, raw) in lines {
        if let Some((key, value)) = parse_line(origin, line_no, raw)? {
            let slot = layer.entry(key.clone()).or_default();
            if key == "reaction" {
                slot.push(value);
            } else {
                *slot = vec![value];
            }
        }
    }
    Ok(layer)
}

fn merge(lower: &mut Layer, upper: Layer) {
    for (key, values) in upper {
        lower.insert(key, values);
    }
}

/// Parses a configuration document (plus the preset it names, if any).
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    load_config(&ConfigSources {
        file: Some(("config", text)),
        ..Default::default()
    })
}

pub fn load_config(sources: &ConfigSources<'_>) -> Result<RunConfig, ConfigError> {
    let file = match sources.file {
        Some((name, text)) => parse_layer(name, text.lines().enumerate().map(|(i, l)| (i + 1, l)))?,
        None => Layer::new(),
    };
    let overrides = parse_layer(
        "override",
        sources.overrides.iter().enumerate().map(|(i, l)| (i + 1, l.as_str())),
    )?;
    let scenario = overrides
        .get("scenario")
        .or(file.get("scenario"))
        .map(|v| v[0].clone())
        .or(sources.preset.map(str::to_string));
    if let Some(name) = sources.preset {
        if preset_text(name).is_none() {
            return Err(ConfigError::UnknownPreset(name.to_string()));
        }
    }
    let preset_name = sources
        .preset
        .or_else(|| scenario.as_deref().filter(|s| preset_text(s).is_some()));
    let mut merged = match preset_name {
        Some(name) => parse_layer(
            name,
            preset_text(name)
                .expect("checked above")
                .lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l)),
        )?,
        None => Layer::new(),
    };
    merge(&mut merged, file);
    merge(&mut merged, overrides);
    if let Some(name) = sources.preset {
        merged.insert("scenario".into(), vec![name.to_string()]);
    }
    resolve(&merged)
}

fn single<'a>(layer: &'a Layer, key: &str) -> Option<&'a str> {
    layer.get(key).and_then(|v| v.last()).map(String::as_str)
}

fn number<T: std::str::FromStr>(layer: &Layer, key: &str, default: T) -> Result<T, ConfigError> {
    match single(layer, key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| invalid(key, format!("cannot parse {v:?}"))),
    }
}

fn float_list(key: &str, text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid(key, format!("cannot parse {:?} as a number", s.trim())))
        })
        .collect()
}

fn parse_reaction(text: &str, n_species: usize) -> Result<Reaction, ConfigError> {
    let parts: Vec<&str> = text.split('|').collect();
    if parts.len() != 4 {
        return Err(invalid("reaction", "expected reactants|products|k_f|k_b"));
    }
    let stoich = |s: &str| -> Result<Vec<u32>, ConfigError> {
        let v: Result<Vec<u32>, _> = s.split(',').map(|x| x.trim().parse::<u32>()).collect();
        let v = v.map_err(|_| invalid("reaction", format!("bad stoichiometry {s:?}")))?;
        if v.len() != n_species {
            return Err(invalid(
                "reaction",
                format!("stoichiometry {s:?} has {} entries, expected {n_species}", v.len()),
            ));
        }
        Ok(v)
    };
    let rate = |s: &str| -> Result<f64, ConfigError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid("reaction", format!("bad rate constant {s:?}")))
    };
    Ok(Reaction {
        reactants: stoich(parts[0])?,
        products: stoich(parts[1])?,
        forward_rate: rate(parts[2])?,
        backward_rate: rate(parts[3])?,
    })
}

fn parse_initial(text: &str, n_species: usize) -> Result<InitialData, ConfigError> {
    let (kind, body) = text
        .split_once(':')
        .ok_or_else(|| invalid("initial", "expected uniform:..., step:.../... or cosine:.../..."))?;
    let pair = |body: &str| -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
        let (a, b) = body
            .split_once('/')
            .ok_or_else(|| invalid("initial", format!("{kind} needs two lists separated by '/'")))?;
        Ok((float_list("initial", a)?, float_list("initial", b)?))
    };
    let data = match kind.trim() {
        "uniform" => InitialData::Uniform(float_list("initial", body)?),
        "step" => {
            let (left, right) = pair(body)?;
            InitialData::Step { left, right }
        }
        "cosine" => {
            let (base, amp) = pair(body)?;
            let total: f64 = amp.iter().sum();
            if total.abs() > 1e-12 {
                return Err(invalid("initial", "cosine amplitudes must sum to zero"));
            }
            if base.iter().zip(&amp).any(|(b, a)| b - a.abs() < 0.0 || b + a.abs() > 1.0) {
                return Err(invalid("initial", "cosine profile leaves [0, 1]"));
            }
            InitialData::Cosine { base, amp }
        }
        other => return Err(invalid("initial", format!("unknown profile {other:?}"))),
    };
    let lists: Vec<&Vec<f64>> = match &data {
        InitialData::Uniform(c) => vec![c],
        InitialData::Step { left, right } => vec![left, right],
        InitialData::Cosine { base, amp } => vec![base, amp],
    };
    if lists.iter().any(|l| l.len() != n_species) {
        return Err(invalid("initial", format!("every list needs {n_species} entries")));
    }
    let check = |c: &Vec<f64>| {
        ConcVector::from_full(c)
            .map(|_| ())
            .map_err(|e| invalid("initial", e.to_string()))
    };
    match &data {
        InitialData::Uniform(c) => check(c)?,
        InitialData::Step { left, right } => {
            check(left)?;
            check(right)?;
        }
        InitialData::Cosine { base, .. } => check(base)?,
    }
    debug_assert_eq!(data.n_species(), n_species);
    Ok(data)
}

fn resolve(layer: &Layer) -> Result<RunConfig, ConfigError> {
    let scenario = single(layer, "scenario").unwrap_or("custom").to_string();
    let n_species: usize = match single(layer, "species") {
        None => return Err(invalid("species", "required")),
        Some(v) => v
            .parse()
            .map_err(|_| invalid("species", format!("cannot parse {v:?}")))?,
    };
    if n_species < 3 {
        return Err(invalid("species", "at least 3 species are required"));
    }
    let d_values = float_list("D", single(layer, "D").ok_or_else(|| invalid("D", "required"))?)?;
    let pairs = n_species * (n_species - 1) / 2;
    let upper = match d_values.len() {
        1 => vec![d_values[0]; pairs],
        k if k == pairs => d_values,
        k => {
            return Err(invalid(
                "D",
                format!("expected 1 or {pairs} values for {n_species} species, found {k}"),
            ))
        }
    };
    let reactions = layer.get("reaction").cloned().unwrap_or_default();
    let production = match single(layer, "production").unwrap_or("zero") {
        "zero" => ProductionLaw::Zero,
        "quaternary" => ProductionLaw::QuaternaryReversible,
        "custom" => {
            if reactions.is_empty() {
                return Err(invalid("production", "custom needs at least one reaction line"));
            }
            let parsed: Result<Vec<Reaction>, _> =
                reactions.iter().map(|r| parse_reaction(r, n_species)).collect();
            ProductionLaw::Custom(ReactionTable { reactions: parsed? })
        }
        other => return Err(invalid("production", format!("unknown law {other:?}"))),
    };
    if !reactions.is_empty() && !matches!(production, ProductionLaw::Custom(_)) {
        return Err(invalid("reaction", "reaction lines need production=custom"));
    }
    let spec = MixtureSpec::from_upper_triangle(n_species, &upper, production).map_err(|e| {
        let key = match e {
            crate::mixture::MixtureError::WrongSpeciesCount { .. } => "production",
            crate::mixture::MixtureError::NonConservativeProduction { .. }
            | crate::mixture::MixtureError::InvalidReaction(_) => "reaction",
            _ => "D",
        };
        invalid(key, e.to_string())
    })?;

    let length: f64 = number(layer, "length", 1.0)?;
    let cells: usize = number(layer, "cells", 128)?;
    let grid = Grid1D::new(length, cells).map_err(|e| {
        let key = if matches!(e, crate::grid::GridError::BadLength(_)) { "length" } else { "cells" };
        invalid(key, e.to_string())
    })?;

    let defaults = SchemeParams::default();
    let scheme = SchemeParams {
        tau: number(layer, "tau", defaults.tau)?,
        eps: number(layer, "eps", defaults.eps)?,
        picard_tol: number(layer, "picard_tol", defaults.picard_tol)?,
        picard_max: number(layer, "picard_max", defaults.picard_max)?,
        damping_theta: number(layer, "damping_theta", defaults.damping_theta)?,
        eta_floor: number(layer, "eta_floor", defaults.eta_floor)?,
        t_end: number(layer, "t_end", defaults.t_end)?,
        linearization: match single(layer, "linearization").unwrap_or("mass") {
            "mass" => Linearization::MassLinearized,
            "frozen" => Linearization::Frozen,
            other => return Err(invalid("linearization", format!("unknown mode {other:?}"))),
        },
        audit: match single(layer, "audit").unwrap_or("enforce") {
            "enforce" => AuditMode::Enforce,
            "warn" => AuditMode::Warn,
            other => return Err(invalid("audit", format!("unknown mode {other:?}"))),
        },
    };
    scheme.validate(n_species).map_err(|e| match e {
        StepperError::InvalidParams { name, reason } => invalid(name, reason),
        other => invalid("scheme", other.to_string()),
    })?;

    let initial = match single(layer, "initial") {
        Some(text) => parse_initial(text, n_species)?,
        None => InitialData::Uniform(vec![1.0 / n_species as f64; n_species]),
    };

    let mut emit = EmitFlags {
        timeseries: false,
        snapshots: false,
        audit: false,
        certify: false,
    };
    match single(layer, "emit") {
        None => emit = EmitFlags::default(),
        Some(list) => {
            for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                match item {
                    "timeseries" => emit.timeseries = true,
                    "snapshots" => emit.snapshots = true,
                    "audit" | "audit_json" => emit.audit = true,
                    "certify" | "certify_json" => emit.certify = true,
                    other => return Err(invalid("emit", format!("unknown output {other:?}"))),
                }
            }
        }
    }
    let snapshot_every: usize = number(layer, "snapshot_every", 100)?;
    if snapshot_every == 0 {
        return Err(invalid("snapshot_every", "must be at least 1"));
    }
    let decay_window = match single(layer, "decay_window") {
        None => None,
        Some(text) => {
            let v = float_list("decay_window", text)?;
            if v.len() != 2 || !(v[0] < v[1]) || !v.iter().all(|x| x.is_finite()) {
                return Err(invalid("decay_window", "expected t0,t1 with t0 < t1"));
            }
            Some((v[0], v[1]))
        }
    };

    Ok(RunConfig {
        scenario,
        spec,
        grid,
        scheme,
        initial,
        output_dir: PathBuf::from(single(layer, "output_dir").unwrap_or("out")),
        emit,
        snapshot_every,
        certify_samples: number(layer, "certify_samples", 100)?,
        decay_window,
        seed: number(layer, "seed", 1)?,
    })
}

impl RunConfig {
    /// Initial concentrations on the configured grid.
    pub fn initial_field(&self) -> Result<ConcentrationField, ConfigError> {
        self.initial.field(&self.grid)
    }

    /// `L²` distance between `c` and the exact equal-diffusivity solution at
    /// time `t`, when the scenario has one.
    pub fn heat_l2_error(&self, c: &ConcentrationField, t: f64) -> Option<f64> {
        let d = self.spec.common_diffusivity()?;
        if !self.spec.production().is_zero() {
            return None;
        }
        let exact = self
            .initial
            .heat_solution(&self.grid, d, self.scheme.eta_floor, t)?;
        let h = self.grid.spacing();
        let sq: f64 = c
            .full()
            .as_slice()
            .iter()
            .zip(exact.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Some((sq * h).sqrt())
    }
}
