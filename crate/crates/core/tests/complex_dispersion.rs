mod common;

use std::f64::consts::PI;

use gapgreen::dispersion::{
    bloch_pair, concavity_radius, continue_ray, continue_ray_partial, dispersion_at, energy, energy_gradient, BandDispersion, DispersionOptions, QuadraticModel,
    StepControl,
};
use gapgreen::error::Error;
use gapgreen::linalg::dotc;
use gapgreen::par::Exec;
use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;

fn hill_working(b: f64) -> f64 {
    let mu_pi = common::mathieu_1d(common::Q, PI, 12)[0];
    let ev = common::hill_eigenvalues(common::Q, Complex::new(PI, b), 12);
    let near = ev.iter().min_by(|x, y| (*x - mu_pi).norm().total_cmp(&(*y - mu_pi).norm())).unwrap();
    assert!(near.im.abs() < 1e-9);
    -(near.re - mu_pi)
}

#[test]
fn mathieu_dispersion_is_a_sum_of_hill_branches() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    for b in [0.05, 0.2, 0.4, 0.6] {
        let (e, defect, _) = energy(&model, &[b, 0.0], None).unwrap();
        assert!((e - hill_working(b)).abs() < 1e-9, "b = {b}: {e} vs {}", hill_working(b));
        assert!(defect < 1e-10);
        let (e2, _, _) = energy(&model, &[b, -b], None).unwrap();
        assert!((e2 - 2.0 * hill_working(b)).abs() < 1e-9);
    }
}

#[test]
fn free_dispersion_is_minus_beta_squared() {
    let (op, edge) = common::free();
    let model = BandDispersion::new(&op, &edge, DispersionOptions::default(), Exec::default()).unwrap();
    let s = dispersion_at(&model, &[0.3, -0.4], None).unwrap();
    assert!((s.energy + 0.25).abs() < 1e-12);
    assert!((s.grad[0] + 0.6).abs() < 1e-8 && (s.grad[1] - 0.8).abs() < 1e-8);
    for p in 0..2 {
        for q in 0..2 {
            let expect = if p == q { -2.0 } else { 0.0 };
            assert!((s.hessian[(p, q)] - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn rays_stay_real_and_concave_near_the_edge() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    let ctl = StepControl { t_max: 0.6, ..StepControl::default() };
    let samples = continue_ray(&model, &[0.6, 0.8], &ctl).unwrap();
    assert!(samples.len() > 3);
    for s in samples.iter().take_while(|s| s.beta.iter().map(|b| b * b).sum::<f64>().sqrt() < 0.5) {
        assert!(s.reality_defect < 1e-8 && s.max_curvature() < 0.0, "{s:?}");
    }
    let radius = concavity_radius(&model, &[vec![1.0, 0.0], vec![0.6, 0.8]], &ctl).unwrap();
    assert!(radius >= 0.6, "{radius}");
}

#[test]
fn continuation_failure_reports_last_good_step() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    let ctl = StepControl { t_max: 2.0, ..StepControl::default() };
    let (good, failure) = continue_ray_partial(&model, &[0.6, 0.8], &ctl).unwrap();
    match continue_ray(&model, &[0.6, 0.8], &ctl) {
        Err(Error::ContinuationFailure { last_good_t, .. }) => {
            assert!(failure.is_some());
            assert!((last_good_t - good.last().unwrap().beta.iter().map(|b| b * b).sum::<f64>().sqrt()).abs() < 1e-12);
        }
        Ok(v) => assert!(failure.is_none() && v.len() == good.len()),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn quadratic_model_closed_form() {
    let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
    let model = QuadraticModel::new(m.clone());
    let b = [0.2, -0.7];
    let (e, g, _, _) = energy_gradient(&model, &b, None).unwrap();
    let mb = &m * nalgebra::DVector::from_column_slice(&b);
    assert!((e + 0.5 * mb.dot(&nalgebra::DVector::from_column_slice(&b))).abs() < 1e-14);
    assert!((g[0] + mb[0]).abs() < 1e-12 && (g[1] + mb[1]).abs() < 1e-12);
}

#[test]
fn bloch_pair_is_normalised_and_paired() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    let pair = bloch_pair(&model, &[0.3, 0.1]).unwrap();
    assert!((pair.pairing - dotc(&pair.phi_minus, &pair.phi_plus)).norm() < 1e-14);
    assert!(pair.pairing.norm() > 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dispersion_is_even(b in prop::array::uniform2(-0.5..0.5f64)) {
        let f = common::mathieu();
        let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::Sequential).unwrap();
        let (a, _, _) = energy(&model, &b, None).unwrap();
        let (c, _, _) = energy(&model, &[-b[0], -b[1]], None).unwrap();
        prop_assert!((a - c).abs() < 1e-11 * (1.0 + a.abs()));
        prop_assert!(a <= 1e-14);
    }

    #[test]
    fn free_dispersion_matches_closed_form(b in prop::array::uniform2(-1.0..1.0f64)) {
        let (op, edge) = common::free();
        let model = BandDispersion::new(&op, &edge, DispersionOptions::default(), Exec::Sequential).unwrap();
        let (e, _, _) = energy(&model, &b, None).unwrap();
        prop_assert!((e + b[0] * b[0] + b[1] * b[1]).abs() < 1e-12);
    }
}
