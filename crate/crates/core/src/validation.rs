//! Ray sweeps comparing the quadrature oracle with the leading term, decay
//! fits and remainder profiles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{leading_term, LeadingTermInputs};
use crate::bands::BandEdge;
use crate::dispersion::{bloch_pair, BandDispersion};
use crate::error::{Error, Result};
use crate::geometry::{support_point, SupportPoint, SupportTolerances};
use crate::linalg::C64;
use crate::oracle::{GreenOracle, OracleOptions};
use crate::par::Exec;

/// Everything a sweep needs besides the direction and radii.
#[derive(Clone, Debug)]
pub struct SweepContext<'a> {
    pub edge: &'a BandEdge,
    pub model: &'a BandDispersion<'a>,
    /// Working (oriented) energy `σ(λ − e)`, negative.
    pub lambda: f64,
    /// Source point; targets are `y + r s`.
    pub y: Vec<f64>,
    pub oracle: OracleOptions,
    pub support: SupportTolerances,
    pub exec: Exec,
}

/// One radius of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub g_oracle: C64,
    pub g_lead: C64,
    /// `|G_oracle| / |G_lead|`.
    pub abs_ratio: f64,
    /// `arg G_oracle − arg G_lead` in `(−π, π]`.
    pub phase_diff: f64,
    /// `G_oracle − G_lead`.
    pub remainder: C64,
    pub converged: bool,
    pub grid: usize,
}

/// Oracle versus leading term along one ray.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RaySweepTable {
    pub s: Vec<f64>,
    /// Working energy.
    pub lambda: f64,
    pub lambda_physical: f64,
    pub beta_s: Vec<f64>,
    pub h: f64,
    pub rows: Vec<SweepRow>,
    /// Set when some oracle value did not converge.
    pub partial: bool,
}

impl RaySweepTable {
    pub fn abs_ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.abs_ratio).collect()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if t == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        t
    }
}

/// Sweep along a single direction.
pub fn ray_sweep(ctx: &SweepContext<'_>, s: &[f64], r_list: &[f64]) -> Result<RaySweepTable> {
    let mut out = ray_sweeps(ctx, &[s.to_vec()], r_list)?;
    Ok(out.remove(0))
}

/// Sweeps along several directions; all oracle values come from one pass
/// over the quadrature grid.
pub fn ray_sweeps(ctx: &SweepContext<'_>, directions: &[Vec<f64>], r_list: &[f64]) -> Result<Vec<RaySweepTable>> {
    let mut radii = r_list.to_vec();
    radii.sort_by(f64::total_cmp);
    let supports: Vec<SupportPoint> = ctx.exec.try_map(directions.len(), |i| support_point(ctx.model, ctx.lambda, &directions[i], &ctx.support))?;
    let lambda_physical = ctx.edge.to_physical(ctx.lambda);
    let mut points = Vec::new();
    for s in directions {
        for &r in &radii {
            let x: Vec<f64> = ctx.y.iter().zip(s).map(|(a, b)| a + r * b).collect();
            points.push((x, ctx.y.clone()));
        }
    }
    let samples = if points.is_empty() {
        Vec::new()
    } else {
        let d = ctx.y.len();
        GreenOracle::new(ctx.model.op, lambda_physical, vec![0.0; d], ctx.oracle.clone(), ctx.exec)?.evaluate(&points)?
    };
    let mut tables = Vec::with_capacity(directions.len());
    for (i, sp) in supports.into_iter().enumerate() {
        let pair = bloch_pair(ctx.model, &sp.beta_s)?;
        let mut rows = Vec::with_capacity(radii.len());
        for (j, &r) in radii.iter().enumerate() {
            let smp = &samples[i * radii.len() + j];
            let inp = LeadingTermInputs { edge: ctx.edge, sp: &sp, pair: &pair, x: smp.x.clone(), y: smp.y.clone() };
            let lead = leading_term(&inp)?;
            rows.push(SweepRow {
                r,
                g_oracle: smp.value,
                g_lead: lead,
                abs_ratio: smp.value.norm() / lead.norm(),
                phase_diff: wrap_angle(smp.value.arg() - lead.arg()),
                remainder: smp.value - lead,
                converged: smp.converged,
                grid: smp.grid,
            });
        }
        let partial = rows.iter().any(|r| !r.converged);
        tables.push(RaySweepTable {
            s: sp.s.clone(),
            lambda: ctx.lambda,
            lambda_physical,
            beta_s: sp.beta_s.clone(),
            h: sp.h,
            rows,
            partial,
        });
    }
    Ok(tables)
}

/// Least-squares fit of `log|G| ≈ −a r − b log r + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exp_rate: f64,
    pub alg_exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Inclusive `r` range of the rows used.
    pub window: (f64, f64),
    pub n_rows: usize,
}

/// Fit over the top two thirds of the table's `r` range.
pub fn fit_decay(table: &RaySweepTable) -> Result<FitResult> {
    let (lo, hi) = match (table.rows.first(), table.rows.last()) {
        (Some(a), Some(b)) => (a.r, b.r),
        _ => return Err(Error::InvalidInput("empty sweep table".into())),
    };
    fit_decay_from(table, lo + (hi - lo) / 3.0)
}

/// Fit over rows with `r ≥ r_floor`.
pub fn fit_decay_from(table: &RaySweepTable, r_floor: f64) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = table.rows.iter().filter(|row| row.r >= r_floor - 1e-12).map(|row| (row.r, row.g_oracle.norm())).collect();
    fit_points(&pts)
}

/// Fit of `(r, |G|)` samples; needs at least four of them.
pub fn fit_points(pts: &[(f64, f64)]) -> Result<FitResult> {
    if pts.len() < 4 {
        return Err(Error::InvalidInput(format!("decay fit needs at least 4 rows in the window, got {}", pts.len())));
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || pts.iter().any(|p| p.0 <= 0.0 || p.1 <= 0.0) {
        return Err(Error::InvalidInput("degenerate design: need 3 distinct positive radii and nonzero values".into()));
    }
    let n = pts.len();
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => -pts[i].0,
        1 => -pts[i].0.ln(),
        _ => 1.0,
    });
    let b = DVector::from_iterator(n, pts.iter().map(|p| p.1.ln()));
    let qr = a.clone().qr();
    let x = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * &b))
        .ok_or_else(|| Error::InvalidInput("degenerate design matrix".into()))?;
    let resid = &a * &x - &b;
    let mean = b.mean();
    let ss_tot: f64 = b.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = resid.iter().map(|v| v * v).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(FitResult {
        exp_rate: x[0],
        alg_exponent: x[1],
        intercept: x[2],
        r_squared,
        window: (pts[0].0, pts[n - 1].0),
        n_rows: n,
    })
}

/// `(r, |G_oracle − G_lead| e^{h r} r^{d/2 − ε})` for each row.
pub fn remainder_profile(table: &RaySweepTable, epsilon: f64) -> Vec<(f64, f64)> {
    let d = table.s.len() as f64;
    table
        .rows
        .iter()
        .map(|row| (row.r, row.remainder.norm() * (table.h * row.r).exp() * row.r.powf(d / 2.0 - epsilon)))
        .collect()
}

/// Whether `values` never increase by more than `slack` relative.
pub fn non_increasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

/// Whether `|v − 1|` never increases along the sequence.
pub fn approaches_one(values: &[f64]) -> bool {
    let dev: Vec<f64> = values.iter().map(|v| (v - 1.0).abs()).collect();
    non_increasing(&dev, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(f64, f64)]) -> RaySweepTable {
        RaySweepTable {
            s: vec![1.0, 0.0],
            lambda: -0.25,
            lambda_physical: -0.25,
            beta_s: vec![0.5, 0.0],
            h: 0.5,
            rows: rows
                .iter()
                .map(|&(r, g)| SweepRow {
                    r,
                    g_oracle: C64::new(g, 0.0),
                    g_lead: C64::new(g, 0.0),
                    abs_ratio: 1.0,
                    phase_diff: 0.0,
                    remainder: C64::new(0.0, 0.0),
                    converged: true,
                    grid: 0,
                })
                .collect(),
            partial: false,
        }
    }

    #[test]
    fn recovers_exact_model() {
        let rows: Vec<(f64, f64)> = (1..=9).map(|i| 5.0 * i as f64).map(|r| (r, (-0.5 * r).exp() * r.powf(-0.5))).collect();
        let f = fit_decay(&table(&rows)).unwrap();
        assert!((f.exp_rate - 0.5).abs() < 1e-10);
        assert!((f.alg_exponent - 0.5).abs() < 1e-10);
        assert!(f.r_squared > 0.999_999);
        assert!(f.window.0 >= 5.0 + 40.0 / 3.0 - 1e-9);
    }

    #[test]
    fn rejects_short_window() {
        let rows: Vec<(f64, f64)> = [8.0f64, 16.0, 24.0, 32.0].iter().map(|&r| (r, (-r).exp())).collect();
        assert!(fit_decay(&table(&rows)).is_err());
        assert!(fit_points(&[(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn zero_remainder_profile() {
        let rows: Vec<(f64, f64)> = [10.0, 20.0].iter().map(|&r| (r, 1.0)).collect();
        assert!(remainder_profile(&table(&rows), 0.25).iter().all(|p| p.1 == 0.0));
    }

    #[test]
    fn angle_wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
