//! Reference Green's function by quadrature of the fiber resolvent over
//! the Brillouin zone, optionally on a contour shifted into complex
//! quasimomentum.
//!
//! `G(x, y) = (2π)^{-d} ∫ Σ_{m,m'} w_m e^{iξ_m·x} [(M(k) − λ)^{-1}]_{mm'} w_{m'} e^{−iξ_{m'}·y} dk`
//! with `ξ_m = k + 2πm` and a smooth spectral window `w` that tapers the
//! truncated plane-wave basis. The window is entire in `ξ`, so shifting
//! `k ↦ k + iτ` leaves the integral unchanged. The trapezoid rule on the
//! periodic integrand converges geometrically.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SupportPoint;
use crate::linalg::{Lu, C64, CZERO};
use crate::operator::{assemble_fiber, FourierIndexSet, PeriodicOperator};
use crate::par::{pairwise_sum, Exec};
use crate::special::{bessel_k0, erf_window};

/// Relative rounding error allowed per unit of summed contribution size.
const ROUNDOFF: f64 = 1e-14;

/// Quadrature and discretization controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub cutoff: usize,
    /// Nodes per axis; `0` picks `max(32, 8⌈r_max⌉)`, rounded up to even.
    pub grid: usize,
    pub max_doublings: usize,
    /// Relative agreement required between the grid and its half subgrid.
    pub tol_quad: f64,
    /// Width of the spectral window, relative to the basis half-width.
    pub window_width: f64,
    /// Use the `k ↦ −k` conjugation symmetry of real operators to halve the
    /// work; the result is then real by construction.
    pub symmetric: bool,
    /// Nodes where `λ` is closer than this to the fiber spectrum are
    /// rejected.
    pub gap_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { cutoff: 6, grid: 0, max_doublings: 2, tol_quad: 1e-6, window_width: 0.08, symmetric: true, gap_tol: 1e-6 }
    }
}

/// One Green's function value with its quadrature diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub value: C64,
    /// Same quantity on the half-resolution subgrid.
    pub coarse_value: C64,
    pub grid: usize,
    /// Imaginary shift `tβ_s` of the contour.
    pub contour_shift: Vec<f64>,
    pub converged: bool,
    /// Smallest distance from `λ` to a fiber spectrum over the nodes.
    pub min_distance: f64,
    pub min_distance_at: Vec<f64>,
}

/// Batched oracle: all points share one pass over the quadrature nodes.
#[derive(Clone, Debug)]
pub struct GreenOracle<'a> {
    pub op: &'a PeriodicOperator,
    pub lambda: f64,
    pub shift: Vec<f64>,
    pub opts: OracleOptions,
    pub exec: Exec,
}

struct PointTables {
    /// `w`-free phases `e^{2πi m·x}` per basis index.
    px: Vec<Vec<C64>>,
    /// `e^{−2πi m·y}` per distinct `y`.
    qy: Vec<Vec<C64>>,
    y_of: Vec<usize>,
}

struct RowSum {
    all: Vec<C64>,
    even: Vec<C64>,
    /// `Σ |contribution|`, for the roundoff floor.
    mag: Vec<f64>,
    min_dist: f64,
    min_at: Vec<f64>,
}

fn axis_phases(basis: &FourierIndexSet, x: &[f64], sign: f64) -> Vec<C64> {
    let d = basis.dim();
    let n = basis.cutoff() as i32;
    let tables: Vec<Vec<C64>> = (0..d)
        .map(|p| (-n..=n).map(|m| C64::from_polar(1.0, sign * 2.0 * PI * m as f64 * x[p])).collect())
        .collect();
    basis
        .indices()
        .iter()
        .map(|m| (0..d).fold(C64::new(1.0, 0.0), |acc, p| acc * tables[p][(m[p] + n) as usize]))
        .collect()
}

impl<'a> GreenOracle<'a> {
    pub fn new(op: &'a PeriodicOperator, lambda: f64, shift: Vec<f64>, opts: OracleOptions, exec: Exec) -> Result<Self> {
        if shift.len() != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), got: shift.len() });
        }
        Ok(Self { op, lambda, shift, opts, exec })
    }

    /// `G(x_i, y_i)` for every pair.
    pub fn evaluate(&self, points: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<OracleSample>> {
        let d = self.op.dim();
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut r_max: f64 = 0.0;
        for (x, y) in points {
            if x.len() != d || y.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len().min(y.len()) });
            }
            let r = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if r < 0.5 {
                return Err(Error::InvalidInput(format!("|x − y| = {r} is below 0.5; the kernel is singular on the diagonal")));
            }
            r_max = r_max.max(r);
        }
        let floor = 8 * (r_max.ceil() as usize);
        let mut m = if self.opts.grid == 0 { floor.max(32) } else { self.opts.grid };
        if m < floor {
            return Err(Error::InvalidInput(format!("grid {m} is below 8⌈|x − y|⌉ = {floor}")));
        }
        m += m % 2;
        let basis = FourierIndexSet::new(d, self.opts.cutoff);
        let tables = self.tables(&basis, points);

        let mut rows = self.pass(&basis, &tables, points, m, false)?;
        let mut sums: Vec<C64> = reduce(&rows, |r| &r.all);
        let mut mags: Vec<f64> = (0..points.len()).map(|p| rows.iter().map(|r| r.mag[p]).sum()).collect();
        let mut coarse: Vec<C64> = reduce(&rows, |r| &r.even);
        let mut min = rows.iter().fold((f64::INFINITY, Vec::new()), |a, r| if r.min_dist < a.0 { (r.min_dist, r.min_at.clone()) } else { a });
        let norm = |m: usize| (m as f64).powi(d as i32);
        let mut value: Vec<C64> = sums.iter().map(|s| s / norm(m)).collect();
        let mut coarse_value: Vec<C64> = coarse.iter().map(|s| s / norm(m / 2)).collect();
        let mut converged = self.converged(&value, &coarse_value, &mags, m);
        let mut doublings = 0;
        while !converged.iter().all(|&c| c) && doublings < self.opts.max_doublings {
            doublings += 1;
            m *= 2;
            rows = self.pass(&basis, &tables, points, m, true)?;
            let new = reduce(&rows, |r| &r.all);
            for (p, mg) in mags.iter_mut().enumerate() {
                *mg += rows.iter().map(|r| r.mag[p]).sum::<f64>();
            }
            coarse = sums.clone();
            sums = sums.iter().zip(&new).map(|(a, b)| a + b).collect();
            for r in &rows {
                if r.min_dist < min.0 {
                    min = (r.min_dist, r.min_at.clone());
                }
            }
            value = sums.iter().map(|s| s / norm(m)).collect();
            coarse_value = coarse.iter().map(|s| s / norm(m / 2)).collect();
            converged = self.converged(&value, &coarse_value, &mags, m);
        }
        Ok(points
            .iter()
            .enumerate()
            .map(|(i, (x, y))| OracleSample {
                x: x.clone(),
                y: y.clone(),
                lambda: self.lambda,
                value: value[i],
                coarse_value: coarse_value[i],
                grid: m,
                contour_shift: self.shift.clone(),
                converged: converged[i],
                min_distance: min.0,
                min_distance_at: min.1.clone(),
            })
            .collect())
    }

    /// Relative grid-doubling test, with a floor at the rounding error of
    /// the node sums.
    fn converged(&self, fine: &[C64], coarse: &[C64], mags: &[f64], m: usize) -> Vec<bool> {
        let scale = (m as f64).powi(self.op.dim() as i32);
        fine.iter()
            .zip(coarse)
            .zip(mags)
            .map(|((f, c), mg)| (f - c).norm() <= self.opts.tol_quad * f.norm() + ROUNDOFF * mg / scale)
            .collect()
    }

    fn tables(&self, basis: &FourierIndexSet, points: &[(Vec<f64>, Vec<f64>)]) -> PointTables {
        let mut ys: Vec<&Vec<f64>> = Vec::new();
        let mut y_of = Vec::with_capacity(points.len());
        for (_, y) in points {
            match ys.iter().position(|v| *v == y) {
                Some(i) => y_of.push(i),
                None => {
                    ys.push(y);
                    y_of.push(ys.len() - 1);
                }
            }
        }
        PointTables {
            px: points.iter().map(|(x, _)| axis_phases(basis, x, 1.0)).collect(),
            qy: ys.iter().map(|y| axis_phases(basis, y, -1.0)).collect(),
            y_of,
        }
    }

    /// One sweep over the `m^d` grid, chunked by the first node index. With
    /// `only_new`, nodes on the half grid are skipped.
    fn pass(&self, basis: &FourierIndexSet, tab: &PointTables, points: &[(Vec<f64>, Vec<f64>)], m: usize, only_new: bool) -> Result<Vec<RowSum>> {
        let d = self.op.dim();
        let n_rows = if self.opts.symmetric { m / 2 + 1 } else { m };
        let inner = m.pow(d as u32 - 1);
        self.exec.try_map(n_rows, |i1| {
            let mut all = vec![CZERO; points.len()];
            let mut even = vec![CZERO; points.len()];
            let mut mag = vec![0.0; points.len()];
            let mut min_dist = f64::INFINITY;
            let mut min_at = Vec::new();
            for lin in 0..inner {
                let mut idx = vec![i1];
                let mut rest = lin;
                for _ in 1..d {
                    idx.push(rest % m);
                    rest /= m;
                }
                idx[1..].reverse();
                let is_even = idx.iter().all(|i| i % 2 == 0);
                if only_new && is_even {
                    continue;
                }
                let weight = if self.opts.symmetric {
                    let partner: Vec<usize> = idx.iter().map(|&i| (m - i) % m).collect();
                    if idx > partner {
                        continue;
                    }
                    if idx == partner {
                        1.0
                    } else {
                        2.0
                    }
                } else {
                    1.0
                };
                let k: Vec<f64> = idx.iter().map(|&i| -PI + 2.0 * PI * i as f64 / m as f64).collect();
                let (contrib, dist) = self.node(basis, tab, points, &k)?;
                if dist < min_dist {
                    min_dist = dist;
                    min_at = k.clone();
                }
                for (p, c) in contrib.into_iter().enumerate() {
                    let c = if self.opts.symmetric { C64::new(weight * c.re, 0.0) } else { c };
                    all[p] += c;
                    mag[p] += c.norm();
                    if is_even {
                        even[p] += c;
                    }
                }
            }
            Ok(RowSum { all, even, mag, min_dist, min_at })
        })
    }

    fn node(&self, basis: &FourierIndexSet, tab: &PointTables, points: &[(Vec<f64>, Vec<f64>)], k: &[f64]) -> Result<(Vec<C64>, f64)> {
        let d = self.op.dim();
        let kc: Vec<C64> = k.iter().zip(&self.shift).map(|(&a, &b)| C64::new(a, b)).collect();
        let fiber = assemble_fiber(self.op, &kc, basis)?.entries;
        let lu = Lu::factor_shifted(&fiber, C64::new(self.lambda, 0.0)).map_err(|_| Error::NotInGap {
            lambda: self.lambda,
            distance: 0.0,
            at: format!("{k:?}"),
        })?;
        let dist = distance_estimate(&lu);
        if dist < self.opts.gap_tol {
            return Err(Error::NotInGap { lambda: self.lambda, distance: dist, at: format!("{kc:?}") });
        }
        let a = (2 * basis.cutoff() + 1) as f64 * PI;
        let nc = basis.cutoff() as i32;
        let axis_w: Vec<Vec<C64>> = (0..d)
            .map(|p| (-nc..=nc).map(|mm| erf_window((kc[p] + 2.0 * PI * mm as f64) / a, self.opts.window_width)).collect())
            .collect();
        let w: Vec<C64> = basis
            .indices()
            .iter()
            .map(|mm| (0..d).fold(C64::new(1.0, 0.0), |acc, p| acc * axis_w[p][(mm[p] + nc) as usize]))
            .collect();
        let solved: Vec<Vec<C64>> = tab
            .qy
            .iter()
            .map(|q| {
                let mut b: Vec<C64> = q.iter().zip(&w).map(|(a, b)| a * b).collect();
                lu.solve(&mut b);
                b.iter().zip(&w).map(|(u, w)| u * w).collect()
            })
            .collect();
        let out = points
            .iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let u = &solved[tab.y_of[i]];
                let s = tab.px[i].iter().zip(u).fold(CZERO, |acc, (p, v)| acc + p * v);
                let phase: C64 = (0..d).fold(CZERO, |acc, p| acc + kc[p] * (x[p] - y[p]));
                s * (C64::new(0.0, 1.0) * phase).exp()
            })
            .collect();
        Ok((out, dist))
    }
}

fn reduce(rows: &[RowSum], pick: impl Fn(&RowSum) -> &Vec<C64>) -> Vec<C64> {
    let n = rows.first().map_or(0, |r| pick(r).len());
    (0..n)
        .map(|p| {
            let col: Vec<C64> = rows.iter().map(|r| pick(r)[p]).collect();
            pairwise_sum(&col)
        })
        .collect()
}

/// `1/‖(M − λ)^{-1}‖` estimated by a few steps of inverse iteration.
fn distance_estimate(lu: &Lu) -> f64 {
    let n = lu.dim();
    let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05)).collect();
    let mut growth = 0.0;
    for _ in 0..4 {
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= nv);
        lu.solve(&mut v);
        growth = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    1.0 / growth
}

/// `G_λ(x, y)` on the real Brillouin zone with `grid` nodes per axis
/// (`0` for automatic), failing if the grid-doubling test does not pass.
pub fn green_bz_integral(op: &PeriodicOperator, lambda: f64, x: &[f64], y: &[f64], opts: &OracleOptions, exec: Exec) -> Result<OracleSample> {
    let oracle = GreenOracle::new(op, lambda, vec![0.0; op.dim()], opts.clone(), exec)?;
    single(oracle.evaluate(&[(x.to_vec(), y.to_vec())])?)
}

/// `G_λ(x, y)` on the contour `k + i t β_s`.
pub fn green_shifted_contour(
    op: &PeriodicOperator,
    lambda: f64,
    sp: &SupportPoint,
    t: f64,
    x: &[f64],
    y: &[f64],
    opts: &OracleOptions,
    exec: Exec,
) -> Result<OracleSample> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("contour parameter t = {t} must lie in [0, 1)")));
    }
    let shift = sp.beta_s.iter().map(|b| t * b).collect();
    let oracle = GreenOracle::new(op, lambda, shift, opts.clone(), exec)?;
    single(oracle.evaluate(&[(x.to_vec(), y.to_vec())])?)
}

fn single(mut v: Vec<OracleSample>) -> Result<OracleSample> {
    let s = v.pop().expect("one point");
    if !s.converged {
        return Err(Error::NoConvergence {
            stage: "Brillouin-zone quadrature".into(),
            detail: format!("grid {} vs half grid differ by {:.3e} relative", s.grid, (s.value - s.coarse_value).norm() / s.value.norm()),
        });
    }
    Ok(s)
}

/// Free-space Green's function of `−Δ − λ` for `λ < 0`, `d ∈ {1, 2, 3}`.
pub fn free_reference(lambda: f64, r: f64, d: usize) -> Result<f64> {
    if !(lambda < 0.0) || !(r > 0.0) {
        return Err(Error::InvalidInput(format!("need lambda < 0 and r > 0, got {lambda}, {r}")));
    }
    let q = (-lambda).sqrt();
    match d {
        1 => Ok((-q * r).exp() / (2.0 * q)),
        2 => Ok(bessel_k0(q * r) / (2.0 * PI)),
        3 => Ok((-q * r).exp() / (4.0 * PI * r)),
        _ => Err(Error::InvalidInput(format!("free reference needs d in 1..=3, got {d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_reference_examples() {
        assert!((free_reference(-1.0, 2.0, 3).unwrap() - (-2.0f64).exp() / (8.0 * PI)).abs() < 1e-16);
        assert!((free_reference(-4.0, 1.0, 1).unwrap() - 3.383e-2).abs() < 1e-5);
        assert!((free_reference(-0.25, 20.0, 2).unwrap() - 2.830e-6).abs() < 1e-9);
    }

    #[test]
    fn free_one_dimensional_green() {
        let op = PeriodicOperator::free(1);
        let opts = OracleOptions { cutoff: 4, ..OracleOptions::default() };
        let s = green_bz_integral(&op, -1.0, &[5.0], &[0.0], &opts, Exec::Sequential).unwrap();
        assert!((s.value.re / ((-5.0f64).exp() / 2.0) - 1.0).abs() < 1e-6);
    }
}
