use std::fs;

use msdiff::config::{load_config, parse_config, ConfigError, ConfigSources};
use msdiff::runner::{certify_spec, run_scenario, EXIT_OK, EXIT_SOLVER_ABORT};
use msdiff::mixture::{MixtureSpec, ProductionLaw};

#[test]
fn spec_examples_of_parse_config() {
    let cfg = parse_config("species=3\nD=1,2,3\ncells=64\ntau=1e-3\nt_end=1.0").unwrap();
    let d = cfg.spec.diffusivity();
    assert_eq!((d[(0, 1)], d[(0, 2)], d[(1, 2)]), (1.0, 2.0, 3.0));
    assert!(matches!(
        parse_config("D=1,2,3"),
        Err(ConfigError::Validation { ref key, .. }) if key == "species"
    ));
    assert_eq!(
        parse_config("species=3\nD=1\ntau=-1").unwrap_err(),
        ConfigError::Validation {
            key: "tau".into(),
            reason: "must be positive".into()
        }
    );
}

#[test]
fn heat_run_reports_l2_error() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = vec![
        "cells=32".to_string(),
        "t_end=0.05".to_string(),
        format!("output_dir={}", dir.path().display()),
    ];
    let cfg = load_config(&ConfigSources {
        preset: Some("heat_check"),
        file: None,
        overrides: &overrides,
    })
    .unwrap();
    let outcome = run_scenario(&cfg).unwrap();
    assert_eq!(outcome.exit_code, EXIT_OK);
    let err = outcome.summary.heat_l2_error.unwrap();
    assert!(err > 0.0 && err < 1e-3, "{err}");
    assert!(outcome.summary.relative_entropy_monotone);
    assert!(!outcome.summary.uphill_event);
    let json = fs::read_to_string(dir.path().join("run_summary.json")).unwrap();
    assert!(json.contains("\"heat_l2_error\""));
}

#[test]
fn ternary_short_run_sees_uphill_flux() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = vec![
        "cells=32".to_string(),
        "t_end=0.02".to_string(),
        format!("output_dir={}", dir.path().display()),
    ];
    let cfg = load_config(&ConfigSources {
        preset: Some("ternary_uphill"),
        file: None,
        overrides: &overrides,
    })
    .unwrap();
    let outcome = run_scenario(&cfg).unwrap();
    assert_eq!(outcome.exit_code, EXIT_OK);
    assert!(outcome.summary.uphill_event);
    assert_eq!(outcome.summary.first_uphill.unwrap().species, 2);
}

#[test]
fn abort_keeps_partial_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = vec![
        "cells=16".to_string(),
        "picard_max=1".to_string(),
        format!("output_dir={}", dir.path().display()),
    ];
    let cfg = load_config(&ConfigSources {
        preset: Some("ternary_uphill"),
        file: None,
        overrides: &overrides,
    })
    .unwrap();
    let outcome = run_scenario(&cfg).unwrap();
    assert_eq!(outcome.exit_code, EXIT_SOLVER_ABORT);
    assert!(outcome.trajectory.is_some());
    assert!(dir.path().join("audit.json").exists());
}

#[test]
fn random_five_species_certification() {
    let d = [0.3, 1.0, 2.0, 4.0, 0.5, 0.9, 3.0, 1.5, 0.2, 7.0];
    let spec = MixtureSpec::from_upper_triangle(5, &d, ProductionLaw::Zero).unwrap();
    let report = certify_spec(&spec, "random", 1000, 42);
    assert_eq!(report.failures, 0);
    assert_eq!(report.reports.len(), 1000);
}
