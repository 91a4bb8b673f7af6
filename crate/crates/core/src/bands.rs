//! Band functions over the Brillouin zone, spectral gaps, gap edges and the
//! edge assumptions.
//!
//! Bands are indexed from 1. An edge is the extremum of one band: the top of
//! band `j` (lower boundary of the gap above it) or the bottom of band `j+1`.
//! Edges are stored in an oriented frame: with `σ = +1` for a minimum and
//! `σ = −1` for a maximum, the working band function is `σ(λ_j(k) − e)`,
//! which has a nondegenerate minimum `0` at `k0`. The stored Hessian is the
//! Hessian of this oriented function and is positive definite when the edge
//! is nondegenerate.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::refine_pair;
use crate::error::{Error, Result};
use crate::fd;
use crate::linalg::{self, C64};
use crate::operator::{assemble_fiber, fiber_derivative_forms, real_k, FourierIndexSet, PeriodicOperator};
use crate::par::Exec;

/// Lowest `n_bands` eigenvalues on a closed tensor grid over `[−π, π]^d`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandGrid {
    pub d: usize,
    pub resolution: usize,
    pub n_bands: usize,
    pub cutoff: usize,
    pub kpoints: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl BandGrid {
    /// Maximum of band `j` (1-based) over the grid.
    pub fn band_max(&self, j: usize) -> f64 {
        self.values.iter().map(|v| v[j - 1]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum of band `j` (1-based) over the grid.
    pub fn band_min(&self, j: usize) -> f64 {
        self.values.iter().map(|v| v[j - 1]).fold(f64::INFINITY, f64::min)
    }

    /// Grid spacing.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / (self.resolution - 1) as f64
    }
}

/// Nodes `−π + 2πi/(R−1)`, `i = 0..R`, so both `±π` are included and the
/// grid is symmetric under `k → −k`.
pub fn grid_axis(resolution: usize) -> Vec<f64> {
    (0..resolution).map(|i| -PI + 2.0 * PI * i as f64 / (resolution - 1) as f64).collect()
}

/// All points of the tensor grid, first axis slowest.
pub fn grid_points(d: usize, resolution: usize) -> Vec<Vec<f64>> {
    let axis = grid_axis(resolution);
    let total = resolution.pow(d as u32);
    (0..total)
        .map(|flat| {
            let mut k = vec![0.0; d];
            let mut rem = flat;
            for p in (0..d).rev() {
                k[p] = axis[rem % resolution];
                rem /= resolution;
            }
            k
        })
        .collect()
}

/// Hermitian eigensolve of `M(k)` on every grid node.
pub fn compute_bands(
    op: &PeriodicOperator,
    resolution: usize,
    n_bands: usize,
    cutoff: usize,
    exec: Exec,
) -> Result<BandGrid> {
    if resolution < 3 {
        return Err(Error::InvalidInput(format!("grid resolution must be at least 3, got {resolution}")));
    }
    let d = op.dim();
    let basis = FourierIndexSet::new(d, cutoff);
    if n_bands == 0 || n_bands > basis.len() {
        return Err(Error::InvalidInput(format!("n_bands must be in 1..={}", basis.len())));
    }
    let kpoints = grid_points(d, resolution);
    let values = exec.try_map(kpoints.len(), |i| {
        let m = assemble_fiber(op, &real_k(&kpoints[i]), &basis)?.entries;
        let mut v = linalg::hermitian_eigenvalues(&m).map_err(|e| Error::EigenFailure {
            context: format!("at k = {:?}: {e}", kpoints[i]),
        })?;
        v.truncate(n_bands);
        Ok(v)
    })?;
    Ok(BandGrid { d, resolution, n_bands, cutoff, kpoints, values })
}

/// Open interval between the top of band `below_band` and the bottom of the
/// next band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralGap {
    pub below_band: usize,
    pub lower: f64,
    pub upper: f64,
    pub certified_on_grid: bool,
}

impl SpectralGap {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lower < e && e < self.upper
    }
}

/// Gaps visible on the grid.
pub fn find_gaps(bands: &BandGrid) -> Vec<SpectralGap> {
    (1..bands.n_bands)
        .filter_map(|j| {
            let lower = bands.band_max(j);
            let upper = bands.band_min(j + 1);
            (upper > lower).then_some(SpectralGap { below_band: j, lower, upper, certified_on_grid: true })
        })
        .collect()
}

/// Which boundary of a gap to refine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapSide {
    /// Top of the band below the gap.
    Lower,
    /// Bottom of the band above the gap.
    Upper,
}

/// Kind of band extremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Min,
    Max,
}

/// A band and which of its extrema to locate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTarget {
    pub band: usize,
    pub extremum: Extremum,
}

impl EdgeTarget {
    pub fn from_gap(gap: &SpectralGap, side: GapSide) -> Self {
        match side {
            GapSide::Lower => EdgeTarget { band: gap.below_band, extremum: Extremum::Max },
            GapSide::Upper => EdgeTarget { band: gap.below_band + 1, extremum: Extremum::Min },
        }
    }

    /// Bottom of the spectrum.
    pub fn bottom() -> Self {
        EdgeTarget { band: 1, extremum: Extremum::Min }
    }

    /// `+1` for a minimum, `−1` for a maximum.
    pub fn orientation(&self) -> f64 {
        match self.extremum {
            Extremum::Min => 1.0,
            Extremum::Max => -1.0,
        }
    }
}

/// Pass/fail of one assumption with its numeric evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Checks of the edge assumptions A1–A5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: AssumptionCheck,
    pub a2: AssumptionCheck,
    pub a3: AssumptionCheck,
    pub a4: AssumptionCheck,
    pub a5: AssumptionCheck,
    pub overall: bool,
}

/// Thresholds for [`check_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionTolerances {
    /// A1: largest accepted `|σ(λ_j(k0) − e)|`.
    pub edge_value: f64,
    /// A2: smallest accepted distance of other bands to the edge energy.
    pub isolation_margin: f64,
    /// A3: grid values farther than `cluster_cells` spacings from `k0` must
    /// exceed this fraction of the band width.
    pub uniqueness_fraction: f64,
    pub cluster_cells: f64,
    /// A4: smallest accepted eigenvalue of the oriented Hessian.
    pub min_curvature: f64,
    /// A5: distance of each `k0` component to `{0, π}`.
    pub tol_sym: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        Self {
            edge_value: 1e-9,
            isolation_margin: 1e-6,
            uniqueness_fraction: 1e-3,
            cluster_cells: 3.0,
            min_curvature: 1e-6,
            tol_sym: 1e-6,
        }
    }
}

/// A located band edge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandEdge {
    /// Band index `j` (1-based).
    pub band_index: usize,
    pub k0: Vec<f64>,
    pub edge_energy: f64,
    /// `+1` (band minimum) or `−1` (band maximum).
    pub orientation: f64,
    /// Hessian of `σ(λ_j − e)` at `k0`.
    pub hessian: DMatrix<f64>,
    /// Constant added to `L` before orienting, `−e`.
    pub shift_applied: f64,
    /// Half the distance from `λ_j(k0)` to the rest of the spectrum of `M(k0)`.
    pub epsilon0: f64,
    pub cutoff: usize,
    pub assumptions: AssumptionReport,
}

impl BandEdge {
    /// Oriented working energy `σ(λ − e)` for a physical energy `λ`.
    pub fn to_working(&self, lambda_phys: f64) -> f64 {
        self.orientation * (lambda_phys - self.edge_energy)
    }

    /// Physical energy for a working energy.
    pub fn to_physical(&self, lambda_work: f64) -> f64 {
        self.edge_energy + self.orientation * lambda_work
    }
}

/// `λ_j(k)` for real `k`, polished by a Rayleigh quotient, plus the full
/// sorted spectrum of `M(k)`.
pub fn band_energy(op: &PeriodicOperator, basis: &FourierIndexSet, k: &[f64], band: usize) -> Result<(f64, Vec<f64>)> {
    let m = assemble_fiber(op, &real_k(k), basis)?.entries;
    let (vals, vecs) = linalg::hermitian_eigen(&m)?;
    if band == 0 || band > vals.len() {
        return Err(Error::InvalidInput(format!("band index {band} out of range")));
    }
    let v: Vec<C64> = vecs.column(band - 1).iter().copied().collect();
    let (theta, ..) = refine_pair(&m, C64::new(vals[band - 1], 0.0), &v, &v, 3)?;
    Ok((theta.re, vals))
}

/// `λ_j(k)` and its exact gradient for real `k`.
pub fn band_energy_gradient(op: &PeriodicOperator, basis: &FourierIndexSet, k: &[f64], band: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let kc = real_k(k);
    let m = assemble_fiber(op, &kc, basis)?.entries;
    let (vals, vecs) = linalg::hermitian_eigen(&m)?;
    if band == 0 || band > vals.len() {
        return Err(Error::InvalidInput(format!("band index {band} out of range")));
    }
    let v: Vec<C64> = vecs.column(band - 1).iter().copied().collect();
    let (theta, right, left, _) = refine_pair(&m, C64::new(vals[band - 1], 0.0), &v, &v, 3)?;
    let forms = fiber_derivative_forms(op, &kc, basis, &left, &right)?;
    let den = linalg::dotc(&left, &right);
    Ok((theta.re, forms.iter().map(|f| (f / den).re).collect(), vals))
}

/// Smallest cutoff `N ≥ start` at which `λ_band(k)` moves by less than `tol`
/// when `N` is increased by one.
pub fn auto_cutoff(op: &PeriodicOperator, k: &[f64], band: usize, tol: f64, start: usize, max: usize) -> Result<usize> {
    let mut prev = band_energy(op, &FourierIndexSet::new(op.dim(), start), k, band)?.0;
    for n in start..max {
        let next = band_energy(op, &FourierIndexSet::new(op.dim(), n + 1), k, band)?.0;
        if (next - prev).abs() < tol {
            return Ok(n);
        }
        prev = next;
    }
    Err(Error::NoConvergence { stage: "cutoff selection".into(), detail: format!("no convergence up to N = {max}") })
}

const HESS_STEP: f64 = 1e-3;

/// Refines the extremum of `target.band` by multi-start Newton from the best
/// grid nodes and records the oriented Hessian.
pub fn locate_edge(
    op: &PeriodicOperator,
    target: EdgeTarget,
    bands: &BandGrid,
    cutoff: usize,
    exec: Exec,
) -> Result<BandEdge> {
    let d = op.dim();
    let j = target.band;
    if j == 0 || j > bands.n_bands {
        return Err(Error::InvalidInput(format!("band {j} not in the band grid")));
    }
    let sigma = target.orientation();
    let basis = FourierIndexSet::new(d, cutoff);
    let f = |k: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g, _) = band_energy_gradient(op, &basis, k, j)?;
        Ok((sigma * v, g.iter().map(|x| sigma * x).collect()))
    };
    // The truncated basis is not exactly periodic, so the search wraps but
    // the Hessian stencil at k0 does not.
    let f_wrapped = |k: &[f64]| -> Result<(f64, Vec<f64>)> {
        let k: Vec<f64> = k.iter().map(|&c| wrap_pi(c)).collect();
        f(&k)
    };

    let mut order: Vec<usize> = (0..bands.kpoints.len()).collect();
    order.sort_by(|&a, &b| (sigma * bands.values[a][j - 1]).total_cmp(&(sigma * bands.values[b][j - 1])));
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for &i in &order {
        let k = &bands.kpoints[i];
        if starts.iter().all(|s| periodic_distance(s, k) > 1.5 * bands.spacing()) {
            starts.push(k.clone());
        }
        if starts.len() == 4 {
            break;
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let Ok((val, k)) = newton_minimize(&f_wrapped, s, exec) else { continue };
        if best.as_ref().map_or(true, |b| val < b.0 - 1e-13) {
            best = Some((val, k));
        }
    }
    let Some((_, k0)) = best else {
        return Err(Error::NoConvergence { stage: "edge refinement".into(), detail: "every start failed".into() });
    };
    let k0: Vec<f64> = k0.iter().map(|&c| wrap_pi(c)).collect();
    let (e, spectrum) = band_energy(op, &basis, &k0, j)?;
    let jet = fd::jet_from_gradient(f, &k0, HESS_STEP, exec)?;
    let hessian = jet.hess;
    let epsilon0 = 0.5
        * spectrum
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j - 1)
            .map(|(_, v)| (v - e).abs())
            .fold(f64::INFINITY, f64::min);
    let mut edge = BandEdge {
        band_index: j,
        k0,
        edge_energy: e,
        orientation: sigma,
        hessian,
        shift_applied: -e,
        epsilon0,
        cutoff,
        assumptions: placeholder_report(),
    };
    edge.assumptions = check_assumptions(op, &edge, bands, &AssumptionTolerances::default())?;
    Ok(edge)
}

fn newton_minimize<F>(f: &F, start: &[f64], exec: Exec) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync + Send,
{
    let d = start.len();
    let mut k = start.to_vec();
    let mut fk = f(&k)?.0;
    for _ in 0..60 {
        let jet = fd::jet_from_gradient(f, &k, HESS_STEP, exec)?;
        let h = jet.hess.clone();
        let g = nalgebra::DVector::from_column_slice(&jet.grad);
        if g.norm() < 1e-12 {
            return Ok((fk, k));
        }
        let step = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g * (0.1 / g.norm().max(1e-300)).min(1.0),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = (0..d).map(|p| k[p] + t * step[p]).collect();
            let ft = f(&trial)?.0;
            if ft <= fk + 1e-15 * (1.0 + fk.abs()) {
                k = trial;
                fk = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let moved = t * step.norm();
        if !accepted || moved < 1e-12 {
            return Ok((fk, k));
        }
    }
    Ok((fk, k))
}

fn placeholder_report() -> AssumptionReport {
    let c = AssumptionCheck { pass: false, value: f64::NAN, threshold: f64::NAN, detail: String::new() };
    AssumptionReport { a1: c.clone(), a2: c.clone(), a3: c.clone(), a4: c.clone(), a5: c, overall: false }
}


/// Wraps into `(−π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI + 1e-9 {
        y += 2.0 * PI;
    }
    y
}

/// Euclidean distance between quasimomenta modulo `2πℤ^d`.
pub fn periodic_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = (x - y).rem_euclid(2.0 * PI);
            t.min(2.0 * PI - t).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Evaluates A1–A5 for `edge` against `bands`.
pub fn check_assumptions(
    op: &PeriodicOperator,
    edge: &BandEdge,
    bands: &BandGrid,
    tol: &AssumptionTolerances,
) -> Result<AssumptionReport> {
    let j = edge.band_index;
    let sigma = edge.orientation;
    let e = edge.edge_energy;
    let basis = FourierIndexSet::new(op.dim(), edge.cutoff);

    let (val, spectrum) = band_energy(op, &basis, &edge.k0, j)?;
    let a1v = (sigma * (val - e)).abs();
    let a1 = AssumptionCheck {
        pass: a1v <= tol.edge_value,
        value: a1v,
        threshold: tol.edge_value,
        detail: format!("|λ_{j}(k0) − e| after shift"),
    };

    let mut a2v = f64::INFINITY;
    for v in &bands.values {
        for (i, x) in v.iter().enumerate() {
            if i != j - 1 {
                a2v = a2v.min((x - e).abs());
            }
        }
    }
    for (i, x) in spectrum.iter().enumerate().take(bands.n_bands) {
        if i != j - 1 {
            a2v = a2v.min((x - e).abs());
        }
    }
    let a2 = AssumptionCheck {
        pass: a2v >= tol.isolation_margin,
        value: a2v,
        threshold: tol.isolation_margin,
        detail: "min over grid of |λ_i(k) − e|, i ≠ j".into(),
    };

    let width = bands.band_max(j) - bands.band_min(j);
    let radius = tol.cluster_cells * bands.spacing();
    let mut a3v = f64::INFINITY;
    let mut far_hits = 0usize;
    for (k, v) in bands.kpoints.iter().zip(&bands.values) {
        if periodic_distance(k, &edge.k0) > radius {
            let w = sigma * (v[j - 1] - e) / width.max(1e-300);
            a3v = a3v.min(w);
            if w <= tol.uniqueness_fraction {
                far_hits += 1;
            }
        }
    }
    let a3 = AssumptionCheck {
        pass: far_hits == 0,
        value: a3v,
        threshold: tol.uniqueness_fraction,
        detail: format!("{far_hits} grid nodes near the edge energy away from k0 (relative to band width)"),
    };

    let ev = edge.hessian.clone().symmetric_eigenvalues();
    let a4v = ev.min();
    let a4 = AssumptionCheck {
        pass: a4v >= tol.min_curvature,
        value: a4v,
        threshold: tol.min_curvature,
        detail: "smallest eigenvalue of the oriented Hessian".into(),
    };

    let a5v = edge
        .k0
        .iter()
        .map(|&c| {
            let w = wrap_pi(c).abs();
            w.min((PI - w).abs())
        })
        .fold(0.0, f64::max);
    let a5 = AssumptionCheck {
        pass: a5v <= tol.tol_sym,
        value: a5v,
        threshold: tol.tol_sym,
        detail: "max distance of k0 components to {0, π}".into(),
    };
    let overall = a1.pass && a2.pass && a3.pass && a4.pass && a5.pass;
    Ok(AssumptionReport { a1, a2, a3, a4, a5, overall })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_1d_bands_are_parabolas() {
        let op = PeriodicOperator::free(1);
        let b = compute_bands(&op, 9, 2, 2, Exec::Sequential).unwrap();
        for (k, v) in b.kpoints.iter().zip(&b.values) {
            assert!((v[0] - k[0] * k[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_2d_has_no_gap() {
        let op = PeriodicOperator::free(2);
        let b = compute_bands(&op, 9, 4, 2, Exec::Sequential).unwrap();
        assert!(find_gaps(&b).is_empty());
        let corner = b.kpoints.iter().position(|k| k[0] == PI && k[1] == PI).unwrap();
        assert!((b.values[corner][0] - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn wrap_and_distance() {
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!(periodic_distance(&[PI], &[-PI]) < 1e-15);
    }
}
