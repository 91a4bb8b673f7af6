mod common;

use std::f64::consts::PI;

use gapgreen::bands::{
    check_assumptions, compute_bands, find_gaps, grid_axis, locate_edge, periodic_distance, AssumptionTolerances, EdgeTarget, GapSide,
};
use gapgreen::operator::PeriodicOperator;
use gapgreen::par::Exec;
use proptest::prelude::*;

#[test]
fn mathieu_gap_and_edge_match_hill_oracle() {
    let f = common::mathieu();
    let mu_pi = common::mathieu_1d(common::Q, PI, 12);
    let curv = common::mathieu_1d_curvature(common::Q, PI, 12, 0);

    assert!(f.edge.band_index == 1 && f.edge.orientation == -1.0);
    assert!(periodic_distance(&f.edge.k0, &[PI, PI]) <= 1e-6, "k0 = {:?}", f.edge.k0);
    assert!((f.edge.edge_energy - 2.0 * mu_pi[0]).abs() <= 1e-7, "{} vs {}", f.edge.edge_energy, 2.0 * mu_pi[0]);
    for p in 0..2 {
        assert!((f.edge.hessian[(p, p)] + curv).abs() <= 1e-7 * curv.abs().max(1.0), "H_pp = {}, oracle {}", f.edge.hessian[(p, p)], -curv);
    }
    assert!(f.edge.hessian[(0, 1)].abs() <= 1e-7);
    assert!(f.edge.assumptions.overall, "{:?}", f.edge.assumptions);

    let axis: Vec<f64> = (0..=200).map(|i| -PI + 2.0 * PI * i as f64 / 200.0).collect();
    let one_d: Vec<Vec<f64>> = axis.iter().map(|&k| common::mathieu_1d(common::Q, k, 12)).collect();
    let mut upper = f64::INFINITY;
    for a in &one_d {
        for b in &one_d {
            let mut sums: Vec<f64> = a.iter().take(3).flat_map(|x| b.iter().take(3).map(move |y| x + y)).collect();
            sums.sort_by(f64::total_cmp);
            upper = upper.min(sums[1]);
        }
    }
    let located = locate_edge(&f.op, EdgeTarget::from_gap(&f.gap, GapSide::Upper), &f.bands, common::CUTOFF, Exec::default()).unwrap();
    assert!((located.edge_energy - upper).abs() <= 1e-7, "{} vs {upper}", located.edge_energy);
}

#[test]
fn free_operator_has_no_gap_and_bottom_at_zero() {
    let op = PeriodicOperator::free(2);
    let bands = compute_bands(&op, 9, 3, 1, Exec::default()).unwrap();
    assert!(find_gaps(&bands).is_empty());
    let (_, edge) = common::free();
    assert!(edge.edge_energy.abs() < 1e-12 && edge.orientation == 1.0);
    assert!(periodic_distance(&edge.k0, &[0.0, 0.0]) < 1e-9);
    for p in 0..2 {
        assert!((edge.hessian[(p, p)] - 2.0).abs() < 1e-9);
    }
}

#[test]
fn free_band_values_on_grid() {
    let op = PeriodicOperator::free(2);
    let bands = compute_bands(&op, 9, 1, 1, Exec::default()).unwrap();
    for (k, v) in bands.kpoints.iter().zip(&bands.values) {
        let expect = (k[0] * k[0] + k[1] * k[1]).min((k[0].abs() - 2.0 * PI).powi(2) + k[1] * k[1]).min(k[0] * k[0] + (k[1].abs() - 2.0 * PI).powi(2));
        assert!((v[0] - expect).abs() < 1e-10 * (1.0 + expect), "k = {k:?}");
    }
}

#[test]
fn grid_contains_both_zone_boundaries() {
    let axis = grid_axis(9);
    assert_eq!(axis.len(), 9);
    assert_eq!(axis[0], -PI);
    assert_eq!(axis[8], PI);
    assert!(axis[4].abs() < 1e-15);
}

#[test]
fn evenness_on_64_grid() {
    let op = PeriodicOperator::separable_mathieu(2, common::Q);
    let bands = compute_bands(&op, 64, 3, 3, Exec::default()).unwrap();
    let axis = grid_axis(64);
    let mut worst = 0.0f64;
    for (flat, k) in bands.kpoints.iter().enumerate() {
        let mi = axis.iter().position(|a| (a + k[0]).abs() < 1e-14);
        let mj = axis.iter().position(|a| (a + k[1]).abs() < 1e-14);
        let (Some(mi), Some(mj)) = (mi, mj) else { continue };
        let mirror = bands.kpoints.iter().position(|q| q[0] == axis[mi] && q[1] == axis[mj]).unwrap();
        for (a, b) in bands.values[flat].iter().zip(&bands.values[mirror]) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn assumption_a5_flags_off_symmetry_edge() {
    let f = common::mathieu();
    let mut moved = f.edge.clone();
    moved.k0 = vec![PI - 0.01, PI];
    let tol = AssumptionTolerances::default();
    let rep = check_assumptions(&f.op, &moved, &f.bands, &tol).unwrap();
    assert!(!rep.a5.pass && !rep.overall);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bands_are_sorted(q in 0.0..8.0f64, res in 3usize..8) {
        let op = PeriodicOperator::separable_mathieu(2, q);
        let bands = compute_bands(&op, res, 4, 2, Exec::Sequential).unwrap();
        for v in &bands.values {
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn sequential_and_parallel_agree(q in 0.0..8.0f64) {
        let op = PeriodicOperator::separable_mathieu(2, q);
        let a = compute_bands(&op, 5, 3, 2, Exec::Sequential).unwrap();
        let b = compute_bands(&op, 5, 3, 2, Exec::default()).unwrap();
        prop_assert_eq!(a.values, b.values);
    }
}
