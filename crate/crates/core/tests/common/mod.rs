//! Independent reference computations shared by the integration tests.
//! Nothing here goes through the fiber assembly, the eigen tracker or the
//! special-function code of the library.
#![allow(dead_code)]

use std::f64::consts::PI;

use gapgreen::bands::{compute_bands, find_gaps, locate_edge, BandEdge, BandGrid, EdgeTarget, GapSide, SpectralGap};
use gapgreen::operator::PeriodicOperator;
use gapgreen::par::Exec;
use nalgebra::{Complex, DMatrix};

pub const Q: f64 = 5.0;
pub const CUTOFF: usize = 4;

/// `K_0(z) = ∫_0^∞ exp(−z cosh t) dt` by the trapezoid rule, which converges
/// geometrically for this integrand.
pub fn k0_integral(z: f64) -> f64 {
    let h = 1e-3;
    let mut acc = 0.5 * (-z).exp();
    let mut t: f64 = h;
    loop {
        let v = (-z * t.cosh()).exp();
        acc += v;
        if v < 1e-300 || t > 40.0 {
            break;
        }
        t += h;
    }
    acc * h
}

/// Hill matrix of `−d² + 2q cos 2πx` at quasimomentum `k` on `|m| ≤ n`.
pub fn hill_matrix(q: f64, k: Complex<f64>, n: usize) -> DMatrix<Complex<f64>> {
    let size = 2 * n + 1;
    DMatrix::from_fn(size, size, |i, j| {
        if i == j {
            let xi = k + 2.0 * PI * (i as f64 - n as f64);
            xi * xi
        } else if i.abs_diff(j) == 1 {
            Complex::new(q, 0.0)
        } else {
            Complex::new(0.0, 0.0)
        }
    })
}

/// Sorted 1D Mathieu band values at real `k`.
pub fn mathieu_1d(q: f64, k: f64, n: usize) -> Vec<f64> {
    let m = hill_matrix(q, Complex::new(k, 0.0), n).map(|z| z.re);
    let mut v: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `μ_j''(k)` by second-order perturbation theory on the Hill matrix.
pub fn mathieu_1d_curvature(q: f64, k: f64, n: usize, j: usize) -> f64 {
    let m = hill_matrix(q, Complex::new(k, 0.0), n).map(|z| z.re);
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let target = order[j];
    let dh = |u: usize, v: usize| -> f64 {
        (0..m.nrows()).map(|i| eig.eigenvectors[(i, u)] * 2.0 * (k + 2.0 * PI * (i as f64 - n as f64)) * eig.eigenvectors[(i, v)]).sum()
    };
    let mut acc = 2.0;
    for &o in &order {
        if o != target {
            acc += 2.0 * dh(o, target).powi(2) / (eig.eigenvalues[target] - eig.eigenvalues[o]);
        }
    }
    acc
}

/// Complex eigenvalues of the Hill matrix at complex `k`.
pub fn hill_eigenvalues(q: f64, k: Complex<f64>, n: usize) -> Vec<Complex<f64>> {
    hill_matrix(q, k, n).eigenvalues().expect("Schur decomposition").iter().copied().collect()
}

pub struct Fixture {
    pub op: PeriodicOperator,
    pub bands: BandGrid,
    pub gap: SpectralGap,
    pub edge: BandEdge,
    /// Working energy one fifth of the gap width inside the gap.
    pub lambda: f64,
}

/// Lower edge of the first gap of the separable Mathieu operator, `d = 2`,
/// computed once per test binary.
pub fn mathieu() -> &'static Fixture {
    static CELL: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
    CELL.get_or_init(build_mathieu)
}

fn build_mathieu() -> Fixture {
    let op = PeriodicOperator::separable_mathieu(2, Q);
    let bands = compute_bands(&op, 9, 3, CUTOFF, Exec::default()).unwrap();
    let gap = find_gaps(&bands)[0].clone();
    let edge = locate_edge(&op, EdgeTarget::from_gap(&gap, GapSide::Lower), &bands, CUTOFF, Exec::default()).unwrap();
    let upper = locate_edge(&op, EdgeTarget::from_gap(&gap, GapSide::Upper), &bands, CUTOFF, Exec::default()).unwrap();
    let lambda = -0.2 * (upper.edge_energy - edge.edge_energy);
    Fixture { op, bands, gap, edge, lambda }
}

/// Bottom of the spectrum of `−Δ` in the plane.
pub fn free() -> (PeriodicOperator, BandEdge) {
    let op = PeriodicOperator::free(2);
    let bands = compute_bands(&op, 9, 2, 1, Exec::default()).unwrap();
    let edge = locate_edge(&op, EdgeTarget::bottom(), &bands, 1, Exec::default()).unwrap();
    (op, edge)
}

pub fn unit(theta: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin()]
}
