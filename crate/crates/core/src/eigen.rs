//! Isolated eigenpairs of fiber matrices, followed along paths in complex
//! quasimomentum.
//!
//! A branch is a simple eigenvalue `λ(k)` with right and left eigenvectors.
//! Moving from one quasimomentum to the next uses a first-order predictor
//! for the eigenvalue and two-sided Rayleigh-quotient iteration seeded by the
//! previous vectors. A step is accepted only if the new right eigenvector
//! overlaps the previous one by at least `min_overlap` and the eigenvalue
//! lands near the prediction; otherwise the step is halved.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, dotc, matvec, normalize, Lu, C64, CZERO};
use crate::operator::{assemble_fiber, fiber_derivative_forms, real_k, FourierIndexSet, PeriodicOperator};

/// One point on a tracked branch.
#[derive(Clone, Debug)]
pub struct BranchState {
    pub k: Vec<C64>,
    pub value: C64,
    /// Unit right eigenvector, gauge-fixed.
    pub right: Vec<C64>,
    /// Unit left eigenvector (`u^H M = λ u^H`).
    pub left: Vec<C64>,
    /// `‖M v − λ v‖ / max|M|`.
    pub residual: f64,
}

/// Controls for branch tracking.
#[derive(Clone, Debug)]
pub struct TrackOptions {
    pub min_overlap: f64,
    /// Largest accepted deviation of the eigenvalue from its predictor.
    pub jump_tol: f64,
    pub max_halvings: usize,
    pub max_rqi: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { min_overlap: 0.5, jump_tol: 0.5, max_halvings: 12, max_rqi: 8 }
    }
}

/// Fixes the phase so the first coefficient with modulus at least `1e-3`
/// of the largest one is real and positive; also normalizes.
pub fn fix_gauge(v: &mut [C64]) {
    normalize(v);
    let max = v.iter().fold(0.0f64, |a, c| a.max(c.norm()));
    if let Some(c) = v.iter().find(|c| c.norm() >= 1e-3 * max).copied() {
        let rot = c.conj() / c.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

/// Two-sided Rayleigh-quotient refinement of an eigenpair of `m`.
pub fn refine_pair(
    m: &DMatrix<C64>,
    shift: C64,
    right0: &[C64],
    left0: &[C64],
    max_iter: usize,
) -> Result<(C64, Vec<C64>, Vec<C64>, f64)> {
    let scale = linalg::max_abs(m).max(1.0);
    let mut v = right0.to_vec();
    let mut u = left0.to_vec();
    normalize(&mut v);
    normalize(&mut u);
    let mut sigma = shift;
    let mut best: Option<(C64, Vec<C64>, Vec<C64>, f64)> = None;
    for _ in 0..max_iter {
        let lu = factor_perturbed(m, sigma)?;
        for _ in 0..2 {
            lu.solve(&mut v);
            normalize(&mut v);
            lu.solve_adjoint(&mut u);
            normalize(&mut u);
        }
        let mv = matvec(m, &v);
        let den = dotc(&u, &v);
        if den.norm() < 1e-14 {
            return Err(Error::EigenFailure { context: "left and right eigenvectors orthogonal".into() });
        }
        let theta = dotc(&u, &mv) / den;
        let res = mv.iter().zip(&v).map(|(a, b)| (a - theta * b).norm_sqr()).sum::<f64>().sqrt() / scale;
        let improved = best.as_ref().map_or(true, |b| res < b.3);
        if improved {
            best = Some((theta, v.clone(), u.clone(), res));
        }
        if res < 1e-15 || (!improved && res < 1e-12) {
            break;
        }
        sigma = theta;
    }
    let (theta, mut v, mut u, res) = best.expect("at least one iteration");
    if res > 1e-9 {
        return Err(Error::NoConvergence { stage: "eigenpair refinement".into(), detail: format!("residual {res:.3e}") });
    }
    fix_gauge(&mut v);
    normalize(&mut u);
    Ok((theta, v, u, res))
}

fn factor_perturbed(m: &DMatrix<C64>, sigma: C64) -> Result<Lu> {
    let mut s = sigma;
    for _ in 0..4 {
        match Lu::factor_shifted(m, s) {
            Ok(lu) if lu.min_pivot() > 1e-300 => return Ok(lu),
            _ => s += C64::new(1e-10 * (1.0 + sigma.norm()), 1e-10 * (1.0 + sigma.norm())),
        }
    }
    Lu::factor_shifted(m, s)
}

/// Follows an eigenvalue branch of `M(k)` for one operator and basis.
#[derive(Clone, Debug)]
pub struct Tracker<'a> {
    pub op: &'a PeriodicOperator,
    pub basis: &'a FourierIndexSet,
    pub opts: TrackOptions,
}

impl<'a> Tracker<'a> {
    pub fn new(op: &'a PeriodicOperator, basis: &'a FourierIndexSet, opts: TrackOptions) -> Self {
        Self { op, basis, opts }
    }

    /// Starts a branch at real `k` on band `band` (1-based) using a dense
    /// Hermitian solve.
    pub fn start(&self, k: &[f64], band: usize) -> Result<BranchState> {
        let kc = real_k(k);
        let m = assemble_fiber(self.op, &kc, self.basis)?.entries;
        let (vals, vecs) = linalg::hermitian_eigen(&m)?;
        if band == 0 || band > vals.len() {
            return Err(Error::InvalidInput(format!("band index {band} out of range 1..={}", vals.len())));
        }
        let v: Vec<C64> = vecs.column(band - 1).iter().copied().collect();
        let (value, right, left, residual) = refine_pair(&m, C64::new(vals[band - 1], 0.0), &v, &v, self.opts.max_rqi)?;
        Ok(BranchState { k: kc, value, right, left, residual })
    }

    /// Moves the branch from `from` to quasimomentum `to`, halving the step
    /// on rejection and growing it again after each accepted step.
    pub fn step(&self, from: &BranchState, to: &[C64]) -> Result<BranchState> {
        let start = from.k.clone();
        let at = |t: f64| -> Vec<C64> { start.iter().zip(to).map(|(a, b)| a + (b - a) * t).collect() };
        let mut cur = from.clone();
        let mut t = 0.0f64;
        let mut dt = 1.0f64;
        let min_dt = 0.5f64.powi(self.opts.max_halvings as i32);
        while t < 1.0 {
            let t_next = if t + dt >= 1.0 - 1e-12 { 1.0 } else { t + dt };
            let target = if t_next == 1.0 { to.to_vec() } else { at(t_next) };
            match self.attempt(&cur, &target)? {
                Some(s) => {
                    cur = s;
                    t = t_next;
                    dt = (2.0 * dt).min(1.0);
                }
                None if dt > min_dt => dt *= 0.5,
                None => {
                    return Err(Error::ContinuationFailure {
                        last_good_t: t,
                        reason: format!("overlap below {} after {} halvings at k = {:?}", self.opts.min_overlap, self.opts.max_halvings, target),
                    })
                }
            }
        }
        Ok(cur)
    }

    fn attempt(&self, from: &BranchState, to: &[C64]) -> Result<Option<BranchState>> {
        let m_to = assemble_fiber(self.op, to, self.basis)?.entries;
        let m_from = assemble_fiber(self.op, &from.k, self.basis)?.entries;
        let dm = &m_to - &m_from;
        let den = dotc(&from.left, &from.right);
        let pred = from.value + dotc(&from.left, &matvec(&dm, &from.right)) / den;
        let refined = refine_pair(&m_to, pred, &from.right, &from.left, self.opts.max_rqi);
        let (value, right, left, residual) = match refined {
            Ok(r) => r,
            Err(Error::NoConvergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let overlap = dotc(&from.right, &right).norm();
        if overlap < self.opts.min_overlap || (value - pred).norm() > self.opts.jump_tol {
            return Ok(None);
        }
        Ok(Some(BranchState { k: to.to_vec(), value, right, left, residual }))
    }

    /// `∂λ/∂k` on the branch by the Hellmann–Feynman formula `u^H ∂M v / u^H v`.
    pub fn gradient(&self, state: &BranchState) -> Result<Vec<C64>> {
        let forms = fiber_derivative_forms(self.op, &state.k, self.basis, &state.left, &state.right)?;
        let den = dotc(&state.left, &state.right);
        Ok(forms.into_iter().map(|f| f / den).collect())
    }

    /// Distance to, and value of, the nearest other eigenvalue of `M(k)`.
    pub fn isolation(&self, state: &BranchState) -> Result<(f64, C64)> {
        let m = assemble_fiber(self.op, &state.k, self.basis)?.entries;
        let ev = linalg::general_eigenvalues(&m)?;
        let mut d: Vec<(f64, C64)> = ev.iter().map(|&z| ((z - state.value).norm(), z)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(d.get(1).copied().unwrap_or((f64::INFINITY, CZERO)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn tracks_free_branch_into_complex_plane() {
        let op = PeriodicOperator::free(2);
        let basis = FourierIndexSet::new(2, 2);
        let tr = Tracker::new(&op, &basis, TrackOptions::default());
        let s0 = tr.start(&[0.0, 0.0], 1).unwrap();
        assert!(s0.value.norm() < 1e-14);
        let to = [C64::new(0.1, 0.3), C64::new(-0.2, 0.1)];
        let s1 = tr.step(&s0, &to).unwrap();
        let exact = to[0] * to[0] + to[1] * to[1];
        assert!((s1.value - exact).norm() < 1e-13);
        let g = tr.gradient(&s1).unwrap();
        assert!((g[0] - to[0] * 2.0).norm() < 1e-12);
        assert!((g[1] - to[1] * 2.0).norm() < 1e-12);
        let z = basis.zero_position();
        assert!((s1.right[z].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mathieu_branch_stays_real_on_imaginary_axis() {
        let op = PeriodicOperator::separable_mathieu(1, 5.0);
        let basis = FourierIndexSet::new(1, 6);
        let tr = Tracker::new(&op, &basis, TrackOptions::default());
        let s0 = tr.start(&[PI], 1).unwrap();
        let s1 = tr.step(&s0, &[C64::new(PI, 0.4)]).unwrap();
        assert!(s1.value.im.abs() < 1e-10);
        assert!(s1.value.re > s0.value.re);
    }
}
