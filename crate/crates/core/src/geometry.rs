//! Geometry of the level set `Γ_λ = {E = λ}` and its convex interior.
//!
//! For a direction `s` the support point `β_s` is the point of `Γ_λ` where
//! the outward normal is `s`, i.e. `∇E(β_s) = −|∇E(β_s)| s`. It is found by
//! damped Newton on the Lagrange system `s − μ∇E(β) = 0`, `E(β) = λ` with
//! `μ < 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dispersion::{energy, energy_gradient, energy_jet, DispersionModel};
use crate::error::{Error, Result};
use crate::roots::{brent, golden_max};

/// Newton controls and acceptance thresholds for [`support_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportTolerances {
    /// Accepted `|E(β) − λ|`.
    pub tol_level: f64,
    /// Accepted `‖∇E/|∇E| + s‖`.
    pub tol_gauss: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SupportTolerances {
    fn default() -> Self {
        Self { tol_level: 1e-11, tol_gauss: 1e-11, max_iter: 50, max_halvings: 30 }
    }
}

/// The support point of `K_λ` in direction `s` with its local geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportPoint {
    pub s: Vec<f64>,
    pub lambda: f64,
    pub beta_s: Vec<f64>,
    /// Support value `h(s) = ⟨s, β_s⟩`.
    pub h: f64,
    pub grad_norm: f64,
    /// Orthonormal basis `e_{s,2..d}` of `s^⊥`.
    pub frame: Vec<Vec<f64>>,
    /// `det(−e_{s,p}·Hess E(β_s)·e_{s,q})`.
    pub proj_hess_det: f64,
    /// Gauss–Kronecker curvature of `Γ_λ` at `β_s`.
    pub curvature: f64,
    pub newton_residual: f64,
    /// `Hess E(β_s)`.
    pub hessian: DMatrix<f64>,
    /// Lagrange multiplier, `−1/|∇E(β_s)|`.
    pub mu: f64,
}

impl SupportPoint {
    /// `Q_s = −(1/|∇E|) Fᵀ Hess E F`, the tangential second fundamental form.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let f = frame_matrix(&self.frame, self.s.len());
        -(f.transpose() * &self.hessian * f) / self.grad_norm
    }
}

fn check_unit(s: &[f64]) -> Result<()> {
    let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s.is_empty() || (n - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("direction must be a unit vector, |s| = {n}")));
    }
    Ok(())
}

/// `ℛ_s^{-1}(e_l)` for `l = 2..d`, where `ℛ_s` rotates `s` onto `e_1` in
/// the plane of `s` and `e_1` and fixes its orthogonal complement.
pub fn tangent_frame(s: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_unit(s)?;
    let d = s.len();
    let basis = |l: usize| -> Vec<f64> {
        let mut e = vec![0.0; d];
        e[l] = 1.0;
        e
    };
    let c = s[0];
    let mut w = s.to_vec();
    w[0] = 0.0;
    let sn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if sn < 1e-8 && c > 0.0 {
        return Ok((1..d).map(basis).collect());
    }
    let u: Vec<f64> = if sn < 1e-8 { basis(1) } else { w.iter().map(|v| v / sn).collect() };
    Ok((1..d)
        .map(|l| {
            let mut e = basis(l);
            let ul = u[l];
            e[0] -= ul * sn;
            for p in 0..d {
                e[p] += ul * (c - 1.0) * u[p];
            }
            e
        })
        .collect())
}

fn frame_matrix(frame: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, frame.len(), |p, l| frame[l][p])
}

/// `det(−Fᵀ Hess F)` for a tangent frame `F`.
pub fn projected_hessian_det(frame: &[Vec<f64>], hess: &DMatrix<f64>) -> f64 {
    if frame.is_empty() {
        return 1.0;
    }
    let f = frame_matrix(frame, hess.nrows());
    (-(f.transpose() * hess * f)).determinant()
}

/// Gauss–Kronecker curvature of `{E = λ}` from the bordered Hessian,
/// `(−1)^d det([[Hess E, ∇E], [∇Eᵀ, 0]]) / |∇E|^{d+1}`.
pub fn gauss_kronecker_curvature(grad: &[f64], hess: &DMatrix<f64>) -> f64 {
    let d = grad.len();
    let mut b = DMatrix::zeros(d + 1, d + 1);
    b.view_mut((0, 0), (d, d)).copy_from(hess);
    for p in 0..d {
        b[(p, d)] = grad[p];
        b[(d, p)] = grad[p];
    }
    let g = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
    sign * b.determinant() / g.powi(d as i32 + 1)
}

fn gauss_residual(grad: &[f64], s: &[f64]) -> f64 {
    let g = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    grad.iter().zip(s).map(|(a, b)| (a / g + b).powi(2)).sum::<f64>().sqrt()
}

fn lagrange_residual(grad: &[f64], e: f64, s: &[f64], mu: f64, lambda: f64) -> f64 {
    let stat: f64 = s.iter().zip(grad).map(|(a, g)| (a - mu * g).powi(2)).sum();
    (stat + (e - lambda).powi(2)).sqrt()
}

/// Quadratic-model initial guess `(β0, μ0)` with `β0 = c H^{-1} s`.
pub fn quadratic_guess(hess: &DMatrix<f64>, lambda: f64, s: &[f64]) -> Result<(Vec<f64>, f64)> {
    let chol = hess
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("edge Hessian is not positive definite".into()))?;
    let hs = chol.solve(&DVector::from_column_slice(s));
    let q = hs.dot(&DVector::from_column_slice(s));
    let c = (-2.0 * lambda / q).sqrt();
    Ok((hs.iter().map(|v| c * v).collect(), -1.0 / c))
}

/// Solves for `β_s` on `Γ_λ` and fills in the local geometry.
pub fn support_point<M: DispersionModel>(model: &M, lambda: f64, s: &[f64], tol: &SupportTolerances) -> Result<SupportPoint> {
    check_unit(s)?;
    let d = model.dim();
    if s.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.len() });
    }
    if !(lambda < 0.0) {
        return Err(Error::InvalidInput(format!("level must be negative, got {lambda}")));
    }
    let (mut beta, mut mu) = quadratic_guess(model.edge_hessian(), lambda, s)?;
    let mut seed: Option<M::State> = None;
    let mut iters = 0;
    loop {
        let (jet, _, st) = energy_jet(model, &beta, seed.as_ref())?;
        seed = Some(st);
        if jet.hess.clone().symmetric_eigenvalues().max() >= 0.0 {
            return Err(Error::InvalidInput(format!("iterate left the concavity region at beta = {beta:?}")));
        }
        let level = (jet.value - lambda).abs();
        let gauss = gauss_residual(&jet.grad, s);
        if level <= tol.tol_level && gauss <= tol.tol_gauss {
            if mu >= 0.0 {
                return Err(Error::InvalidInput(format!("converged to the wrong branch, mu = {mu}")));
            }
            return finish(model, lambda, s, beta, mu, level.max(gauss), seed.as_ref());
        }
        if iters == tol.max_iter {
            return Err(Error::NoConvergence {
                stage: "support point".into(),
                detail: format!("level residual {level:.3e}, Gauss residual {gauss:.3e} after {iters} iterations"),
            });
        }
        iters += 1;
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        let mut rhs = DVector::zeros(d + 1);
        for p in 0..d {
            for q in 0..d {
                jac[(p, q)] = -mu * jet.hess[(p, q)];
            }
            jac[(p, d)] = -jet.grad[p];
            jac[(d, p)] = jet.grad[p];
            rhs[p] = -(s[p] - mu * jet.grad[p]);
        }
        rhs[d] = -(jet.value - lambda);
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NoConvergence { stage: "support point".into(), detail: "singular Lagrange Jacobian".into() })?;
        let r0 = lagrange_residual(&jet.grad, jet.value, s, mu, lambda);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=tol.max_halvings {
            let trial: Vec<f64> = (0..d).map(|p| beta[p] + t * delta[p]).collect();
            let mu_t = mu + t * delta[d];
            if let Ok((e, g, _, st)) = energy_gradient(model, &trial, seed.as_ref()) {
                let r = lagrange_residual(&g, e, s, mu_t, lambda);
                if r < r0 || r <= 1e-3 * tol.tol_level {
                    beta = trial;
                    mu = mu_t;
                    seed = Some(st);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                stage: "support point".into(),
                detail: format!("line search failed, level residual {level:.3e}, Gauss residual {gauss:.3e}"),
            });
        }
    }
}

fn finish<M: DispersionModel>(
    model: &M,
    lambda: f64,
    s: &[f64],
    beta: Vec<f64>,
    mu: f64,
    residual: f64,
    seed: Option<&M::State>,
) -> Result<SupportPoint> {
    let (jet, ..) = energy_jet(model, &beta, seed)?;
    let frame = tangent_frame(s)?;
    let grad_norm = jet.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj_hess_det = projected_hessian_det(&frame, &jet.hess);
    let curvature = gauss_kronecker_curvature(&jet.grad, &jet.hess);
    let h = s.iter().zip(&beta).map(|(a, b)| a * b).sum();
    Ok(SupportPoint {
        s: s.to_vec(),
        lambda,
        beta_s: beta,
        h,
        grad_norm,
        frame,
        proj_hess_det,
        curvature,
        newton_residual: residual,
        hessian: jet.hess,
        mu,
    })
}

/// `t > 0` with `E(t u) = λ`, bracketed by expanding from `t_guess`.
pub fn radial_root<M: DispersionModel>(
    model: &M,
    lambda: f64,
    u: &[f64],
    t_guess: f64,
    seed: Option<&M::State>,
) -> Result<(f64, M::State)> {
    let mut last: Option<M::State> = seed.cloned();
    let eval = |t: f64, last: &mut Option<M::State>| -> Result<f64> {
        let b: Vec<f64> = u.iter().map(|v| v * t).collect();
        let (e, _, st) = energy(model, &b, last.as_ref())?;
        *last = Some(st);
        Ok(e - lambda)
    };
    let mut lo = 0.0;
    let mut hi = t_guess.max(1e-12);
    let mut bracketed = false;
    for _ in 0..60 {
        let v = eval(hi, &mut last).map_err(|e| Error::InvalidInput(format!("root not bracketed: {e}")))?;
        if v < 0.0 {
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 1.25;
    }
    if !bracketed {
        return Err(Error::InvalidInput(format!("root not bracketed along {u:?}")));
    }
    let t = brent(|t| eval(t, &mut last), lo, hi, 1e-15, 200)?;
    let b: Vec<f64> = u.iter().map(|v| v * t).collect();
    let (_, _, st) = energy(model, &b, last.as_ref())?;
    Ok((t, st))
}

fn quadratic_radius(hess: &DMatrix<f64>, lambda: f64, u: &[f64]) -> f64 {
    let v = DVector::from_column_slice(u);
    (-2.0 * lambda / v.dot(&(hess * &v))).sqrt()
}

/// Closed polyline `{t(θ)(cos θ, sin θ)}` through `Γ_λ` at `n` equally
/// spaced angles (d = 2).
pub fn level_set_trace<M: DispersionModel>(model: &M, lambda: f64, n: usize) -> Result<Vec<[f64; 2]>> {
    if model.dim() != 2 {
        return Err(Error::InvalidInput("level_set_trace requires d = 2".into()));
    }
    if !(lambda < 0.0) || n < 3 {
        return Err(Error::InvalidInput(format!("need lambda < 0 and at least 3 angles, got {lambda}, {n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut seed: Option<M::State> = None;
    let mut t_prev: Option<f64> = None;
    for i in 0..n {
        let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let u = [th.cos(), th.sin()];
        let guess = 0.9 * t_prev.unwrap_or_else(|| quadratic_radius(model.edge_hessian(), lambda, &u));
        let (t, st) = radial_root(model, lambda, &u, guess, seed.as_ref())?;
        out.push([t * u[0], t * u[1]]);
        seed = Some(st);
        t_prev = Some(t);
    }
    Ok(out)
}

/// `β_s` as the maximizer of `⟨s, β⟩` over `Γ_λ` (d = 2): argmax over a
/// trace with `n` vertices, refined by golden-section search in the angle.
pub fn support_by_trace<M: DispersionModel>(model: &M, lambda: f64, s: &[f64], n: usize) -> Result<Vec<f64>> {
    check_unit(s)?;
    let trace = level_set_trace(model, lambda, n)?;
    let (imax, _) = trace
        .iter()
        .enumerate()
        .map(|(i, p)| (i, s[0] * p[0] + s[1] * p[1]))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let dth = 2.0 * std::f64::consts::PI / n as f64;
    let th0 = dth * imax as f64;
    let r0 = (trace[imax][0].powi(2) + trace[imax][1].powi(2)).sqrt();
    let point = |th: f64| -> Result<[f64; 2]> {
        let u = [th.cos(), th.sin()];
        let (t, _) = radial_root(model, lambda, &u, 0.9 * r0, None)?;
        Ok([t * u[0], t * u[1]])
    };
    let (th, _) = golden_max(|th| point(th).map(|p| s[0] * p[0] + s[1] * p[1]), th0 - dth, th0 + dth, 1e-10)?;
    Ok(point(th)?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::QuadraticModel;

    #[test]
    fn frame_examples() {
        assert_eq!(tangent_frame(&[1.0, 0.0]).unwrap(), vec![vec![0.0, 1.0]]);
        let f = tangent_frame(&[0.0, 1.0]).unwrap();
        assert!((f[0][0] + 1.0).abs() < 1e-15 && f[0][1].abs() < 1e-15);
        let f = tangent_frame(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(tangent_frame(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn curvature_of_circle() {
        let rho: f64 = 0.7;
        let b = [rho * 0.6, rho * 0.8];
        let g = [-2.0 * b[0], -2.0 * b[1]];
        let h = DMatrix::from_diagonal_element(2, 2, -2.0);
        assert!((gauss_kronecker_curvature(&g, &h) - 1.0 / rho).abs() < 1e-13);
    }

    #[test]
    fn quadratic_support_point() {
        let q = QuadraticModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0])));
        let sp = support_point(&q, -1.0, &[1.0, 0.0], &SupportTolerances::default()).unwrap();
        assert!((sp.beta_s[0] - 1.0).abs() < 1e-12 && sp.beta_s[1].abs() < 1e-12);
        assert!((sp.h - 1.0).abs() < 1e-12);
        assert!((sp.grad_norm - 2.0).abs() < 1e-12);
        assert!((sp.proj_hess_det - 8.0).abs() < 1e-8);
        assert!((sp.curvature - 4.0).abs() < 1e-8);
    }
}
