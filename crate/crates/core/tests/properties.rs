use approx::assert_relative_eq;
use msdiff::banded::BandedMatrix;
use msdiff::diagnostics::{
    dissipation, mean_composition, pinsker_check, pointwise_dissipation, relative_entropy,
};
use msdiff::grid::{divergence, face_gradient, Field, Grid1D};
use msdiff::mixture::{
    c_to_w, hessian, inverse_hessian, w_to_c, ConcVector, EntropyVector, MixtureSpec, ProductionLaw,
};
use msdiff::spectral::{certify_a0_spectrum, certify_a_spectrum, symmetric_spectrum, DEFAULT_ZERO_TOL_FACTOR};
use msdiff::state::ConcentrationField;
use msdiff::stepper::{assemble_linear_system, SchemeParams};
use proptest::prelude::*;

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn spec_strategy() -> impl Strategy<Value = MixtureSpec> {
    (3usize..=5).prop_flat_map(|ns| {
        proptest::collection::vec(-10f64.ln()..10f64.ln(), ns * (ns - 1) / 2).prop_map(move |logs| {
            let d: Vec<f64> = logs.iter().map(|x| x.exp()).collect();
            MixtureSpec::from_upper_triangle(ns, &d, ProductionLaw::Zero).unwrap()
        })
    })
}

fn state_for(ns: usize) -> impl Strategy<Value = ConcVector> {
    proptest::collection::vec(1e-3f64..1.0, ns).prop_map(|raw| ConcVector::from_full(&normalize(&raw)).unwrap())
}

fn spec_and_state() -> impl Strategy<Value = (MixtureSpec, ConcVector)> {
    spec_strategy().prop_flat_map(|spec| {
        let ns = spec.n_species();
        (Just(spec), state_for(ns))
    })
}

fn field_strategy(ns: usize, cells: usize) -> impl Strategy<Value = ConcentrationField> {
    proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, ns), cells).prop_map(|rows| {
        let cells: Vec<ConcVector> = rows
            .iter()
            .map(|r| ConcVector::from_full(&normalize(r)).unwrap())
            .collect();
        ConcentrationField::from_cells(&cells)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn friction_matrix_annihilates_state((spec, c) in spec_and_state()) {
        let ac = spec.a_matrix(&c) * c.full();
        prop_assert!(ac.amax() <= 1e-12 * spec.big_delta());
    }

    #[test]
    fn spectra_lie_in_band((spec, c) in spec_and_state()) {
        let tol = DEFAULT_ZERO_TOL_FACTOR * spec.big_delta();
        let a = certify_a_spectrum(&spec, &c, tol).unwrap();
        let a0 = certify_a0_spectrum(&spec, &c, tol).unwrap();
        prop_assert!(a.certifies_friction(), "{a:?}");
        prop_assert!(a0.certifies_reduced(), "{a0:?}");
    }

    #[test]
    fn mobility_is_spd((spec, c) in spec_and_state()) {
        let b = spec.mobility(&c).unwrap();
        prop_assert!((&b - b.transpose()).amax() <= 1e-10);
        let eig = symmetric_spectrum(&((&b + b.transpose()) * 0.5)).unwrap();
        prop_assert!(eig[0] > 0.0);
        prop_assert!(b.amax() <= spec.mobility_entry_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn entropy_transform_is_bijective(c in (3usize..=5).prop_flat_map(state_for)) {
        let w = c_to_w(&c).unwrap();
        let back = w_to_c(&w);
        for (a, b) in back.full().iter().zip(c.full().iter()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn entropy_variables_round_trip(w in proptest::collection::vec(-30.0f64..30.0, 2..5)) {
        let wv = EntropyVector::new(&w).unwrap();
        let c = w_to_c(&wv);
        prop_assert!(c.is_strictly_admissible(0.0));
        let back = c_to_w(&c).unwrap();
        for (a, b) in back.as_slice().iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences(
        c in (3usize..=5).prop_flat_map(state_for),
        k in 0usize..4,
    ) {
        let w = c_to_w(&c).unwrap();
        let n = c.n_reduced();
        let k = k % n;
        let step = 1e-6;
        let shifted: Vec<f64> = w.as_slice().iter().enumerate().map(|(i, x)| if i == k { x + step } else { *x }).collect();
        let shifted_back: Vec<f64> = w.as_slice().iter().enumerate().map(|(i, x)| if i == k { x - step } else { *x }).collect();
        let cp = w_to_c(&EntropyVector::new(&shifted).unwrap());
        let cm = w_to_c(&EntropyVector::new(&shifted_back).unwrap());
        let jac = inverse_hessian(&c);
        for i in 0..n {
            let fd = (cp.reduced()[i] - cm.reduced()[i]) / (2.0 * step);
            prop_assert!((fd - jac[(i, k)]).abs() <= 1e-6, "{} vs {}", fd, jac[(i, k)]);
        }
        let product = hessian(&c).unwrap() * &jac;
        prop_assert!((product - nalgebra::DMatrix::identity(n, n)).amax() <= 1e-8);
    }

    #[test]
    fn pointwise_dissipation_bound(
        (spec, c) in spec_and_state(),
        g in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let n = c.n_reduced();
        let d = pointwise_dissipation(&spec, &c, &g[..n]).unwrap();
        prop_assert!(d.contract_margin(spec.big_delta()) >= -1e-10 * d.raw.max(1.0), "{d:?}");
    }

    #[test]
    fn summation_by_parts(
        f in proptest::collection::vec(-1.0f64..1.0, 12),
        g in proptest::collection::vec(-1.0f64..1.0, 12),
    ) {
        let grid = Grid1D::new(2.0, 12).unwrap();
        let ff = Field::from_vec(12, 1, f);
        let gf = Field::from_vec(12, 1, g);
        let grad_g = face_gradient(&grid, &gf).unwrap();
        let grad_f = face_gradient(&grid, &ff).unwrap();
        let div = divergence(&grid, &grad_g).unwrap();
        let h = grid.spacing();
        let lhs: f64 = ff.as_slice().iter().zip(div.as_slice()).map(|(a, b)| a * b * h).sum();
        let rhs: f64 = -grad_f.as_slice().iter().zip(grad_g.as_slice()).map(|(a, b)| a * b * h).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn relative_entropy_nonnegative_and_pinsker(c in field_strategy(4, 10)) {
        let grid = Grid1D::new(1.5, 10).unwrap();
        let reference = normalize(&mean_composition(&grid, &c));
        let rel = relative_entropy(&grid, &c, &reference).unwrap();
        prop_assert!(rel >= 0.0);
        prop_assert!(pinsker_check(&grid, &c, &reference).unwrap().holds());
    }

    #[test]
    fn discrete_dissipation_contract((spec, c) in spec_strategy().prop_flat_map(|s| {
        let ns = s.n_species();
        (Just(s), field_strategy(ns, 8))
    })) {
        let grid = Grid1D::new(1.0, 8).unwrap();
        let w = c.to_entropy().unwrap();
        let d = dissipation(&spec, &grid, &w.to_concentrations(), &w).unwrap();
        prop_assert!(d.raw >= 0.0);
        prop_assert!(d.contract_margin(spec.big_delta()) >= -1e-9 * d.raw.max(1.0));
    }

    #[test]
    fn assembled_system_is_symmetric((spec, c) in spec_strategy().prop_flat_map(|s| {
        let ns = s.n_species();
        (Just(s), field_strategy(ns, 6))
    })) {
        let grid = Grid1D::new(1.0, 6).unwrap();
        let w = c.to_entropy().unwrap();
        let params = SchemeParams::default();
        let sys = assemble_linear_system(&spec, &grid, &params, &w, &w.to_concentrations()).unwrap();
        let m: &BandedMatrix = &sys.matrix;
        prop_assert!(m.max_asymmetry() <= 1e-12 * m.to_dense().amax());
        prop_assert!(m.cholesky().is_ok());
    }
}

#[test]
fn equal_diffusivity_reduced_matrix_is_scalar() {
    let spec = MixtureSpec::uniform(4, 0.37, ProductionLaw::Zero).unwrap();
    let c = ConcVector::from_full(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let inv = spec.a0_inverse(&c).unwrap();
    let expected = nalgebra::DMatrix::<f64>::identity(3, 3) * 0.37;
    assert!((inv - expected).amax() <= 1e-12);
    assert_relative_eq!(spec.common_diffusivity().unwrap(), 0.37);
}
