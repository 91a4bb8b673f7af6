mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use gapgreen::linalg::{hermitian_eigenvalues, C64};
use gapgreen::operator::{assemble_fiber, complex_k, hermiticity_residual, real_k, FourierIndexSet, PeriodicOperator};
use proptest::prelude::*;

/// Real operator with a constant anisotropic metric and a few even,
/// real potential coefficients.
fn random_operator(a11: f64, a22: f64, a12: f64, v: [f64; 3]) -> PeriodicOperator {
    let mut metric = BTreeMap::new();
    metric.insert([0, 0, 0], vec![C64::new(a11, 0.0), C64::new(a12, 0.0), C64::new(a12, 0.0), C64::new(a22, 0.0)]);
    let mut pot = BTreeMap::new();
    for (m, val) in [([1, 0, 0], v[0]), ([0, 1, 0], v[1]), ([1, 1, 0], v[2])] {
        pot.insert(m, C64::new(val, 0.0));
        pot.insert([-m[0], -m[1], 0], C64::new(val, 0.0));
    }
    PeriodicOperator::new(2, metric, pot, None).unwrap()
}

fn arb_operator() -> impl Strategy<Value = PeriodicOperator> {
    (1.0..3.0f64, 1.0..3.0f64, -0.5..0.5f64, prop::array::uniform3(-3.0..3.0f64)).prop_map(|(a, b, c, v)| random_operator(a, b, c, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fiber_is_hermitian_up_to_conjugated_k(op in arb_operator(), kr in prop::array::uniform2(-PI..PI), ki in prop::array::uniform2(-1.0..1.0f64)) {
        let basis = FourierIndexSet::new(2, 3);
        let res = hermiticity_residual(&op, &complex_k(&kr, &ki), &basis).unwrap();
        prop_assert!(res <= 1e-13, "residual {res}");
    }

    #[test]
    fn spectrum_is_even_in_k(op in arb_operator(), k in prop::array::uniform2(-PI..PI)) {
        let basis = FourierIndexSet::new(2, 3);
        let a = hermitian_eigenvalues(&assemble_fiber(&op, &real_k(&k), &basis).unwrap().entries).unwrap();
        let b = hermitian_eigenvalues(&assemble_fiber(&op, &real_k(&[-k[0], -k[1]]), &basis).unwrap().entries).unwrap();
        for (x, y) in a.iter().zip(&b).take(6) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn file_round_trip(op in arb_operator()) {
        let back = PeriodicOperator::from_toml(&op.to_toml()).unwrap();
        prop_assert_eq!(back.content_hash(), op.content_hash());
        prop_assert_eq!(back, op);
    }

    #[test]
    fn separable_fiber_matches_hill_sums(k in prop::array::uniform2(-PI..PI)) {
        let op = PeriodicOperator::separable_mathieu(2, common::Q);
        let basis = FourierIndexSet::new(2, 6);
        let ev = hermitian_eigenvalues(&assemble_fiber(&op, &real_k(&k), &basis).unwrap().entries).unwrap();
        let a = common::mathieu_1d(common::Q, k[0], 12);
        let b = common::mathieu_1d(common::Q, k[1], 12);
        let mut sums: Vec<f64> = a.iter().take(3).flat_map(|x| b.iter().take(3).map(move |y| x + y)).collect();
        sums.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(&sums).take(2) {
            prop_assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}

#[test]
fn free_fiber_is_diagonal_in_plane_waves() {
    let op = PeriodicOperator::free(2);
    let basis = FourierIndexSet::new(2, 2);
    let k = [0.3, -1.1];
    let mut expect: Vec<f64> = basis
        .indices()
        .iter()
        .map(|m| (k[0] + 2.0 * PI * m[0] as f64).powi(2) + (k[1] + 2.0 * PI * m[1] as f64).powi(2))
        .collect();
    expect.sort_by(f64::total_cmp);
    let got = hermitian_eigenvalues(&assemble_fiber(&op, &real_k(&k), &basis).unwrap().entries).unwrap();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-11 * (1.0 + b));
    }
}

#[test]
fn rejects_non_hermitian_potential() {
    let mut metric = BTreeMap::new();
    metric.insert([0, 0, 0], vec![C64::new(1.0, 0.0)]);
    let mut pot = BTreeMap::new();
    pot.insert([1, 0, 0], C64::new(1.0, 0.5));
    pot.insert([-1, 0, 0], C64::new(1.0, 0.5));
    assert!(PeriodicOperator::new(1, metric, pot, None).is_err());
}

#[test]
fn rejects_non_elliptic_metric() {
    let text = "dimension = 1\n[[metric]]\nindex = [0]\nmatrix = [[-1.0]]\n";
    assert!(PeriodicOperator::from_toml(text).is_err());
}

#[test]
fn content_hash_tracks_coefficients() {
    let a = PeriodicOperator::separable_mathieu(2, 5.0);
    let b = PeriodicOperator::separable_mathieu(2, 5.0 + 1e-12);
    assert_eq!(a.content_hash(), PeriodicOperator::separable_mathieu(2, 5.0).content_hash());
    assert_ne!(a.content_hash(), b.content_hash());
}
