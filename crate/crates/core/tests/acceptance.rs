//! Acceptance checks; one PASS/FAIL line per criterion.

use std::time::Instant;

use msdiff::config::{load_config, ConfigSources, InitialData, RunConfig};
use msdiff::diagnostics::{fit_decay_rate, pinsker_check, pointwise_dissipation};
use msdiff::grid::Field;
use msdiff::mixture::{sample_simplex, ConcVector, MixtureSpec, ProductionLaw};
use msdiff::spectral::{certify_a0_spectrum, certify_a_spectrum, symmetric_spectrum};
use msdiff::state::ConcentrationField;
use msdiff::stepper::{run_simulation, AuditMode, StepperError, Trajectory};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_607;

struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn random_spec(rng: &mut ChaCha8Rng) -> MixtureSpec {
    let ns = rng.gen_range(3..=5);
    let d: Vec<f64> = (0..ns * (ns - 1) / 2)
        .map(|_| 10f64.powf(rng.gen_range(-1.0..1.0)))
        .collect();
    MixtureSpec::from_upper_triangle(ns, &d, ProductionLaw::Zero).unwrap()
}

fn near_boundary(rng: &mut ChaCha8Rng, ns: usize) -> ConcVector {
    let mut c: Vec<f64> = sample_simplex(rng, ns).full().iter().copied().collect();
    let small = rng.gen_range(1..ns);
    for _ in 0..small {
        let k = rng.gen_range(0..ns);
        c[k] = 10f64.powf(-rng.gen_range(3.0..12.0));
    }
    let total: f64 = c.iter().sum();
    c.iter_mut().for_each(|x| *x /= total);
    ConcVector::from_full(&c).unwrap()
}

fn preset(name: &str, overrides: &[String]) -> RunConfig {
    load_config(&ConfigSources {
        preset: Some(name),
        file: None,
        overrides,
    })
    .unwrap()
}

/// Runs with audits in warn mode so every violation is counted, and records
/// whether the Pinsker bound held at every output time.
fn simulate(cfg: &RunConfig) -> Result<(Trajectory, bool), StepperError> {
    let mut params = cfg.scheme;
    params.audit = AuditMode::Warn;
    let c0 = cfg.initial_field().unwrap();
    let mut pinsker = true;
    let traj = run_simulation(&cfg.spec, &cfg.grid, &params, &c0, &mut |v| {
        if !pinsker_check(&cfg.grid, v.c, v.reference).unwrap().holds() {
            pinsker = false;
        }
    })?;
    Ok((traj, pinsker))
}

fn l2_error(cfg: &RunConfig, field: &Field, t: f64) -> f64 {
    let d = cfg.spec.common_diffusivity().unwrap();
    let exact = cfg
        .initial
        .heat_solution(&cfg.grid, d, cfg.scheme.eta_floor, t)
        .unwrap();
    let sq: f64 = field
        .as_slice()
        .iter()
        .zip(exact.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sq * cfg.grid.spacing()).sqrt()
}

fn heat_final(cells: usize, tau: f64) -> (RunConfig, ConcentrationField) {
    let cfg = preset(
        "heat_check",
        &[format!("cells={cells}"), format!("tau={tau}"), "t_end=0.1".into()],
    );
    let (traj, _) = simulate(&cfg).unwrap();
    assert!(matches!(cfg.initial, InitialData::Cosine { .. }));
    (cfg, traj.final_c)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn orders(h: &[f64], e: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(e.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

fn main() {
    let mut report = Report { passed: 0, failed: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    // 1 and 2 share the sampling of (spec, c)
    let start = Instant::now();
    let mut spectral_failures = 0;
    let mut samples = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let spec = random_spec(&mut rng);
        let c = sample_simplex(&mut rng, spec.n_species());
        let tol = 1e-9 * spec.big_delta();
        let a = certify_a_spectrum(&spec, &c, tol).unwrap();
        let a0 = certify_a0_spectrum(&spec, &c, tol).unwrap();
        if !(a.certifies_friction() && a0.certifies_reduced()) {
            spectral_failures += 1;
        }
        samples.push((spec, c));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report.line(
        1,
        "spectral certification",
        spectral_failures == 0 && elapsed <= 10.0,
        format!("{spectral_failures} failures in 1000 samples, {elapsed:.2} s (limit 10 s)"),
    );

    let mut spd_failures = 0;
    let mut worst_sym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for (spec, c) in &samples {
        let b = spec.mobility(c).unwrap();
        let sym = (&b - b.transpose()).amax();
        let eig = symmetric_spectrum(&((&b + b.transpose()) * 0.5)).unwrap()[0];
        worst_sym = worst_sym.max(sym);
        min_eig = min_eig.min(eig);
        if !(sym <= 1e-10 && eig > 0.0) {
            spd_failures += 1;
        }
    }
    let mut bound_failures = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10_000 {
        let spec = random_spec(&mut rng);
        let c = near_boundary(&mut rng, spec.n_species());
        let b = spec.mobility(&c).unwrap();
        let bound = spec.mobility_entry_bound();
        let ratio = b.amax() / bound;
        worst_ratio = worst_ratio.max(ratio);
        if !(b.iter().all(|x| x.is_finite()) && ratio <= 1.0) {
            bound_failures += 1;
        }
    }
    report.line(
        2,
        "mobility SPD and bounded",
        spd_failures == 0 && bound_failures == 0,
        format!(
            "{spd_failures} SPD failures (max symmetry residual {worst_sym:.2e}, min eigenvalue {min_eig:.3e}); \
             {bound_failures} bound failures in 10000 near-boundary samples (max |b|/bound {worst_ratio:.3})"
        ),
    );

    // 3
    let mut dissipation_failures = 0;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..10_000 {
        let spec = random_spec(&mut rng);
        let c = sample_simplex(&mut rng, spec.n_species());
        let g: Vec<f64> = (0..spec.n_reduced()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = pointwise_dissipation(&spec, &c, &g).unwrap();
        let margin = d.contract_margin(spec.big_delta());
        worst_margin = worst_margin.min(margin);
        if !(margin >= -1e-10) {
            dissipation_failures += 1;
        }
    }
    report.line(
        3,
        "pointwise dissipation",
        dissipation_failures == 0,
        format!("{dissipation_failures} failures in 10000 samples, worst margin {worst_margin:.3e}"),
    );

    // 4
    let start = Instant::now();
    let mut exact_err: f64 = 0.0;
    for ns in 3..=5 {
        let d = 10f64.powf(rng.gen_range(-1.0..1.0));
        let spec = MixtureSpec::uniform(ns, d, ProductionLaw::Zero).unwrap();
        for _ in 0..100 {
            let c = sample_simplex(&mut rng, ns);
            let inv = spec.a0_inverse(&c).unwrap();
            let n = ns - 1;
            exact_err = exact_err.max((inv - nalgebra::DMatrix::<f64>::identity(n, n) * d).amax());
        }
    }
    // spatial errors with the O(τ) term removed by extrapolation in time
    let cells = [32usize, 64, 128, 256];
    let mut spatial = Vec::new();
    for &m in &cells {
        let (cfg, coarse) = heat_final(m, 1e-4);
        let (_, fine) = heat_final(m, 5e-5);
        let extrapolated = Field::from_fn(m, 3, |k, i| 2.0 * fine.get(k, i) - coarse.get(k, i));
        spatial.push(l2_error(&cfg, &extrapolated, 0.1));
    }
    let hs: Vec<f64> = cells.iter().map(|m| 1.0 / *m as f64).collect();
    let p_space = orders(&hs, &spatial);
    let taus = [4e-3, 2e-3, 1e-3];
    let mut temporal = Vec::new();
    for &tau in &taus {
        let (cfg, c) = heat_final(256, tau);
        temporal.push(l2_error(&cfg, c.full(), 0.1));
    }
    let p_time = orders(&taus, &temporal);
    let elapsed = start.elapsed().as_secs_f64();
    let in_range = |v: &[f64], lo: f64, hi: f64| v.iter().all(|p| (lo..=hi).contains(p));
    report.line(
        4,
        "equal-diffusivity exactness",
        exact_err <= 1e-12 && in_range(&p_space, 1.7, 2.3) && in_range(&p_time, 0.8, 1.2) && elapsed <= 60.0,
        format!(
            "max |A0^-1 - dI| {exact_err:.2e}; spatial errors {} orders {p_space:.3?}; \
             temporal errors {} orders {p_time:.3?}; {elapsed:.1} s (limit 60 s)",
            sci(&spatial),
            sci(&temporal)
        ),
    );

    // presets for 5, 6, 9
    let mut runs = Vec::new();
    let mut ternary = None;
    for name in ["heat_check", "ternary_uphill", "quaternary_reaction"] {
        let cfg = preset(name, &[]);
        let start = Instant::now();
        let result = simulate(&cfg);
        let elapsed = start.elapsed().as_secs_f64();
        match result {
            Ok((traj, pinsker)) => {
                if name == "ternary_uphill" {
                    ternary = Some((cfg.clone(), traj.clone(), pinsker, elapsed));
                }
                runs.push((name, cfg, Some(traj)));
            }
            Err(e) => {
                println!("     {name} aborted: {e}");
                runs.push((name, cfg, None));
            }
        }
    }
    let all_ran = runs.iter().all(|r| r.2.is_some());
    let done: Vec<_> = runs.iter().filter_map(|(n, c, t)| t.as_ref().map(|t| (*n, c, t))).collect();

    let entropy_violations: usize = done.iter().map(|(_, _, t)| t.verdicts.iter().filter(|v| !v.entropy.passed).count()).sum();
    let steps: usize = done.iter().map(|(_, _, t)| t.verdicts.len()).sum();
    let worst_entropy = done
        .iter()
        .flat_map(|(_, _, t)| t.verdicts.iter().map(|v| v.entropy.margin))
        .fold(f64::INFINITY, f64::min);
    report.line(
        5,
        "discrete entropy inequality",
        all_ran && entropy_violations == 0,
        format!("{entropy_violations} violations in {steps} steps over three presets, worst margin {worst_entropy:.3e}"),
    );

    let mut bound_violations = 0;
    let mut min_c = f64::INFINITY;
    let mut max_sum: f64 = 0.0;
    let mut clamps = 0;
    for (_, _, t) in &done {
        clamps += t.clamp_count;
        for r in &t.records {
            min_c = min_c.min(r.min_c);
            max_sum = max_sum.max(r.max_reduced_sum);
            if !(r.min_c > 0.0 && r.max_reduced_sum < 1.0) {
                bound_violations += 1;
            }
        }
        bound_violations += t.verdicts.iter().filter(|v| !v.bounds.passed).count();
    }
    report.line(
        6,
        "bound preservation",
        all_ran && bound_violations == 0 && clamps == 0,
        format!("{bound_violations} violations, {clamps} clamps; min c {min_c:.3e}, max reduced sum 1 - {:.3e}", 1.0 - max_sum),
    );

    // 7
    let mut drifts = Vec::new();
    let mut identity_err: f64 = 0.0;
    let eps_values: [f64; 3] = [1e-6, 1e-7, 1e-8];
    for &eps in &eps_values {
        let traj = if eps == 1e-8 {
            ternary.as_ref().map(|t| t.1.clone())
        } else {
            simulate(&preset("ternary_uphill", &[format!("eps={eps}")])).ok().map(|r| r.0)
        };
        match traj {
            Some(t) => {
                identity_err = identity_err.max(t.mass_identity_error);
                drifts.push(t.max_mass_drift);
            }
            None => drifts.push(f64::NAN),
        }
    }
    let monotone = drifts.windows(2).all(|w| w[1] < w[0]);
    let slope = (drifts[0] / drifts[2]).ln() / (eps_values[0] / eps_values[2]).ln();
    report.line(
        7,
        "mass control",
        identity_err <= 1e-10 && monotone && slope >= 0.4,
        format!("identity error {identity_err:.2e}; drift {} for eps {eps_values:?}; log-log slope {slope:.3}", sci(&drifts)),
    );

    // 8
    match &ternary {
        Some((cfg, t, pinsker, elapsed)) => {
            let slack = cfg.scheme.solver_slack(cfg.spec.n_reduced(), cfg.grid.cells());
            let increases = t
                .records
                .windows(2)
                .filter(|w| !(w[1].relative_entropy < w[0].relative_entropy + slack))
                .count();
            let fit = fit_decay_rate(&t.records, (1.0, 2.0));
            let (lambda, r2) = fit.as_ref().map(|f| (f.lambda, f.r_squared)).unwrap_or((f64::NAN, f64::NAN));
            report.line(
                8,
                "exponential decay",
                increases == 0 && lambda > 0.0 && r2 >= 0.99 && *pinsker && *elapsed <= 60.0,
                format!(
                    "{increases} non-decreasing steps; lambda {lambda:.4}, r^2 {r2:.5} on [1, 2]; \
                     Pinsker bound {}; run {elapsed:.2} s (limit 60 s)",
                    if *pinsker { "holds" } else { "violated" }
                ),
            );
        }
        None => report.line(8, "exponential decay", false, "ternary_uphill did not complete".into()),
    }

    // 9
    let flux_violations: usize = done.iter().map(|(_, _, t)| t.verdicts.iter().filter(|v| !v.flux.passed).count()).sum();
    let worst_flux = done.iter().map(|(_, _, t)| t.max_flux_residual).fold(0.0, f64::max);
    report.line(
        9,
        "Maxwell-Stefan consistency",
        all_ran && flux_violations == 0 && worst_flux <= 1e-8,
        format!("{flux_violations} violations, max relative residual {worst_flux:.2e}"),
    );

    // 10
    let uphill = ternary.as_ref().and_then(|t| t.1.uphill);
    report.line(
        10,
        "uphill diffusion event",
        uphill.is_some(),
        match uphill {
            Some((time, e)) => format!(
                "J.grad c = {:.3e} > 0 for species {} at face {} and t = {time}",
                e.product,
                e.species + 1,
                e.face
            ),
            None => "no uphill event".into(),
        },
    );

    println!("acceptance: {} passed, {} failed", report.passed, report.failed);
}
