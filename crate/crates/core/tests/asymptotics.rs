mod common;

use std::f64::consts::PI;

use gapgreen::asymptotics::{
    bump, integral_i_closed_form, leading_term, leading_term_curvature_form, weierstrass_check, LeadingTermInputs, LocalPatch, PatchOptions,
    WeierstrassCheck,
};
use gapgreen::dispersion::{bloch_pair, BandDispersion, DispersionOptions, QuadraticModel};
use gapgreen::geometry::{support_point, SupportTolerances};
use gapgreen::linalg::{dotc, C64};
use gapgreen::par::Exec;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn free_leading(s: &[f64], r: f64) -> C64 {
    let (op, edge) = common::free();
    let model = BandDispersion::new(&op, &edge, DispersionOptions::default(), Exec::Sequential).unwrap();
    let sp = support_point(&model, -0.25, s, &SupportTolerances::default()).unwrap();
    let pair = bloch_pair(&model, &sp.beta_s).unwrap();
    let x = vec![r * s[0], r * s[1]];
    leading_term(&LeadingTermInputs { edge: &edge, sp: &sp, pair: &pair, x, y: vec![0.0, 0.0] }).unwrap()
}

#[test]
fn free_leading_term_is_the_bessel_asymptote() {
    let z: f64 = 10.0;
    let expect = (-z).exp() * (PI / (2.0 * z)).sqrt() / (2.0 * PI);
    let base = free_leading(&[1.0, 0.0], 20.0);
    assert!((base.re - 2.8638e-6).abs() <= 1e-9 && base.im.abs() < 1e-20);
    assert!((base.re - expect).abs() <= 1e-15);
    for j in 1..12 {
        let v = free_leading(&common::unit(0.37 * j as f64), 20.0);
        assert!((v - base).norm() <= 1e-12 * base.norm());
    }
}

#[test]
fn mathieu_prefactor_forms_agree() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    let y = vec![0.5, 0.5];
    for j in 0..16 {
        let s = common::unit(std::f64::consts::TAU * j as f64 / 16.0);
        let sp = support_point(&model, f.lambda, &s, &SupportTolerances::default()).unwrap();
        let pair = bloch_pair(&model, &sp.beta_s).unwrap();
        for r in [10.0, 20.0, 40.0] {
            let x: Vec<f64> = y.iter().zip(&s).map(|(a, b)| a + r * b).collect();
            let inp = LeadingTermInputs { edge: &f.edge, sp: &sp, pair: &pair, x, y: y.clone() };
            let a = leading_term(&inp).unwrap();
            let b = leading_term_curvature_form(&inp).unwrap();
            assert!((a - b).norm() <= 1e-8 * a.norm());
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    let sp = support_point(&model, f.lambda, &[1.0, 0.0], &SupportTolerances::default()).unwrap();
    let pair = bloch_pair(&model, &sp.beta_s).unwrap();
    let off_ray = LeadingTermInputs { edge: &f.edge, sp: &sp, pair: &pair, x: vec![3.0, 4.0], y: vec![0.0, 0.0] };
    assert!(leading_term(&off_ray).is_err());
    let other = support_point(&model, f.lambda, &[0.0, 1.0], &SupportTolerances::default()).unwrap();
    let wrong_pair = bloch_pair(&model, &other.beta_s).unwrap();
    let inp = LeadingTermInputs { edge: &f.edge, sp: &sp, pair: &wrong_pair, x: vec![5.0, 0.0], y: vec![0.0, 0.0] };
    assert!(leading_term(&inp).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn leading_term_is_gauge_invariant(ar in 0.1..10.0f64, ap in 0.0..std::f64::consts::TAU, br in 0.1..10.0f64, bp in 0.0..std::f64::consts::TAU, j in 0usize..8) {
        let f = common::mathieu();
        let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::Sequential).unwrap();
        let s = common::unit(std::f64::consts::TAU * j as f64 / 8.0);
        let sp = support_point(&model, f.lambda, &s, &SupportTolerances::default()).unwrap();
        let pair = bloch_pair(&model, &sp.beta_s).unwrap();
        let x: Vec<f64> = vec![0.5 + 12.0 * s[0], 0.5 + 12.0 * s[1]];
        let y = vec![0.5, 0.5];
        let base = leading_term(&LeadingTermInputs { edge: &f.edge, sp: &sp, pair: &pair, x: x.clone(), y: y.clone() }).unwrap();
        let mut p = pair.clone();
        let (a, b) = (C64::from_polar(ar, ap), C64::from_polar(br, bp));
        p.phi_plus.iter_mut().for_each(|c| *c *= a);
        p.phi_minus.iter_mut().for_each(|c| *c *= b);
        p.pairing = dotc(&p.phi_minus, &p.phi_plus);
        let v = leading_term(&LeadingTermInputs { edge: &f.edge, sp: &sp, pair: &p, x, y }).unwrap();
        prop_assert!((v - base).norm() <= 1e-13 * base.norm(), "{:e}", (v - base).norm() / base.norm());
    }

    #[test]
    fn bump_is_monotone_and_bounded(a in 0.0..1.2f64, b in 0.0..1.2f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(bump(lo) >= bump(hi));
        prop_assert!((0.0..=1.0).contains(&bump(a)));
    }
}

#[test]
fn free_weierstrass_branch_is_exact() {
    let model = QuadraticModel::new(DMatrix::identity(2, 2) * 2.0);
    let sp = support_point(&model, -0.25, &[0.6, 0.8], &SupportTolerances::default()).unwrap();
    let mut prev: Option<WeierstrassCheck> = None;
    for rad in [1e-2, 5e-3, 2.5e-3] {
        let w = weierstrass_check(&model, &sp, rad, 4).unwrap();
        assert!((w.q_s[(0, 0)] - 2.0).abs() < 1e-10);
        for (zp, a) in &w.samples {
            let z = zp[0];
            let exact = C64::new(0.5, 0.0) - (C64::new(0.25, 0.0) - z * z).sqrt();
            assert!((a - exact).norm() <= 1e-10);
            assert!((a - z * z).norm() <= 2.0 * z.norm().powi(4) + 1e-15, "A = {a}, z'² = {}", z * z);
        }
        if let Some(p) = &prev {
            assert!(WeierstrassCheck::halving_factor(p, &w) >= 1.6);
        }
        prev = Some(w);
    }
}

#[test]
fn mathieu_weierstrass_residual_halves() {
    let f = common::mathieu();
    let model = BandDispersion::new(&f.op, &f.edge, DispersionOptions::default(), Exec::default()).unwrap();
    for s in [[1.0, 0.0], [0.6, 0.8]] {
        let sp = support_point(&model, f.lambda, &s, &SupportTolerances::default()).unwrap();
        let w: Vec<WeierstrassCheck> = [1e-2, 5e-3, 2.5e-3].iter().map(|&r| weierstrass_check(&model, &sp, r, 4).unwrap()).collect();
        for p in w.windows(2) {
            assert!(WeierstrassCheck::halving_factor(&p[0], &p[1]) >= 1.6, "s = {s:?}");
        }
    }
}

#[test]
fn free_i_integral_converges_to_closed_form() {
    let (op, edge) = common::free();
    let model = BandDispersion::new(&op, &edge, DispersionOptions::default(), Exec::default()).unwrap();
    let sp = support_point(&model, -0.25, &[0.6, 0.8], &SupportTolerances::default()).unwrap();
    let patch = LocalPatch::build(&model, &sp, &edge.k0, edge.orientation, &PatchOptions::default()).unwrap();
    let dev: Vec<f64> = [10.0, 20.0, 40.0].iter().map(|&r| (patch.integral_i(r).unwrap().re / integral_i_closed_form(&sp, r) - 1.0).abs()).collect();
    assert!(dev[0] > dev[1] && dev[1] > dev[2] && dev[2] <= 0.1, "{dev:?}");
    let j: Vec<f64> = [10.0, 20.0, 40.0].iter().map(|&r| patch.integral_j(r).unwrap().iter().map(|c| c.norm()).fold(0.0, f64::max)).collect();
    assert!(j[2] < j[0]);
}
