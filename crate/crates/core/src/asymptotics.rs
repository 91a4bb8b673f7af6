//! Leading-order asymptotics of the Green's function in a gap near an edge,
//! and numerical checks of its ingredients.
//!
//! Along `x − y = r s` the kernel behaves like
//! `e^{(x−y)·(ik0−β_s)} (2πr)^{−(d−1)/2} |∇E(β_s)|^{(d−3)/2} det(−𝒫_s Hess E 𝒫_s)^{−1/2} φ₊(x) conj(φ₋(y)) / F`,
//! times the orientation `σ` of the edge. The local integrals `I`, `J` and
//! the reduced Green's function are evaluated on a patch around `ξ = 0` in
//! coordinates rotated so that `s` is the first axis, where the oriented
//! denominator `D(ξ) = σ(λ_j(k0 + iβ_s + ξ) − e) − λ` is replaced by a tensor
//! Chebyshev surrogate shifted to vanish exactly at `ξ = 0`.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bands::BandEdge;
use crate::dispersion::{evaluate_bloch, imaginary, plane_waves, BlochPair, DispersionModel};
use crate::error::{Error, Result};
use crate::geometry::SupportPoint;
use crate::linalg::{dotc, C64, CZERO};
use crate::operator::FourierIndexSet;
use crate::quadrature::{clenshaw, integrate, Chebyshev2, QuadTol};

/// Ingredients of the leading term at one pair of points.
#[derive(Clone, Debug)]
pub struct LeadingTermInputs<'a> {
    pub edge: &'a BandEdge,
    pub sp: &'a SupportPoint,
    pub pair: &'a BlochPair,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LeadingTermInputs<'_> {
    /// Checks dimensions, `s = (x − y)/|x − y|` and `pair.beta = β_s`;
    /// returns `r = |x − y|`.
    pub fn validate(&self) -> Result<f64> {
        let d = self.sp.s.len();
        for (name, len) in [("x", self.x.len()), ("y", self.y.len()), ("k0", self.edge.k0.len()), ("pair", self.pair.beta.len())] {
            if len != d {
                return Err(Error::InvalidInput(format!("{name} has dimension {len}, expected {d}")));
            }
        }
        let diff: Vec<f64> = self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect();
        let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::InvalidInput("x = y".into()));
        }
        let ds = diff.iter().zip(&self.sp.s).map(|(v, s)| (v / r - s).abs()).fold(0.0, f64::max);
        if ds > 1e-12 {
            return Err(Error::InvalidInput(format!("(x − y)/|x − y| differs from s by {ds:.3e}")));
        }
        let db = self.pair.beta.iter().zip(&self.sp.beta_s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if db > 1e-12 {
            return Err(Error::InvalidInput(format!("Bloch pair taken at a β differing from β_s by {db:.3e}")));
        }
        Ok(r)
    }

    fn phase(&self) -> C64 {
        let mut z = CZERO;
        for p in 0..self.x.len() {
            let v = self.x[p] - self.y[p];
            z += C64::new(-self.sp.beta_s[p] * v, self.edge.k0[p] * v);
        }
        z.exp()
    }

    fn bloch_factor(&self) -> C64 {
        let (a, _) = evaluate_bloch(self.pair, &self.x);
        let (_, b) = evaluate_bloch(self.pair, &self.y);
        a * b.conj() / self.pair.pairing
    }
}

/// Leading term of the Green's function of `L − λ` with the projected
/// Hessian determinant.
pub fn leading_term(inp: &LeadingTermInputs<'_>) -> Result<C64> {
    let r = inp.validate()?;
    let d = inp.sp.s.len() as f64;
    if inp.sp.proj_hess_det <= 0.0 {
        return Err(Error::InvalidInput(format!("projected Hessian determinant {} is not positive", inp.sp.proj_hess_det)));
    }
    let scale = (2.0 * PI * r).powf(-(d - 1.0) / 2.0) * inp.sp.grad_norm.powf((d - 3.0) / 2.0) / inp.sp.proj_hess_det.sqrt();
    Ok(inp.phase() * inp.bloch_factor() * (scale * inp.edge.orientation))
}

/// The same term written with the Gauss–Kronecker curvature of `Γ_λ`.
pub fn leading_term_curvature_form(inp: &LeadingTermInputs<'_>) -> Result<C64> {
    let r = inp.validate()?;
    let d = inp.sp.s.len() as f64;
    if inp.sp.curvature <= 0.0 {
        return Err(Error::InvalidInput(format!("curvature {} is not positive", inp.sp.curvature)));
    }
    let scale = (2.0 * PI * r).powf(-(d - 1.0) / 2.0) / (inp.sp.grad_norm * inp.sp.curvature.sqrt());
    Ok(inp.phase() * inp.bloch_factor() * (scale * inp.edge.orientation))
}

/// `C1 |λ|^{(d−3)/4} e^{−C2 |λ|^{1/2} r} / r^{(d−1)/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotropicBound {
    pub lambda: f64,
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    /// Smallest `r` the constants were fitted on.
    pub r_min: f64,
}

impl IsotropicBound {
    pub fn eval(&self, r: f64) -> f64 {
        let d = self.d as f64;
        let l = self.lambda.abs();
        self.c1 * l.powf((d - 3.0) / 4.0) * (-self.c2 * l.sqrt() * r).exp() / r.powf((d - 1.0) / 2.0)
    }

    /// `C2 = min_s h(s)/|λ|^{1/2}` over the support points, and the smallest
    /// `C1` dominating every `(r, |G|)` sample with `r ≥ r_min`.
    pub fn fit(lambda: f64, d: usize, supports: &[SupportPoint], samples: &[(f64, f64)], r_min: f64) -> Result<Self> {
        if supports.is_empty() {
            return Err(Error::InvalidInput("no support points to fit C2".into()));
        }
        let l = lambda.abs();
        let c2 = supports.iter().map(|sp| sp.h / l.sqrt()).fold(f64::INFINITY, f64::min);
        let mut b = Self { lambda, d, c1: 1.0, c2, r_min };
        b.c1 = samples.iter().filter(|s| s.0 >= r_min).map(|&(r, g)| g / b.eval(r)).fold(0.0, f64::max);
        Ok(b)
    }

    /// Whether `|G| ≤ bound` for every sample with `r ≥ r_min`.
    pub fn holds(&self, samples: &[(f64, f64)]) -> bool {
        samples.iter().filter(|s| s.0 >= self.r_min).all(|&(r, g)| g <= self.eval(r) * (1.0 + 1e-12))
    }
}

/// `|∇E|^{(d−3)/2} (2πr)^{−(d−1)/2} det^{−1/2}`, the large-`r` behaviour
/// of `I`.
pub fn integral_i_closed_form(sp: &SupportPoint, r: f64) -> f64 {
    let d = sp.s.len() as f64;
    sp.grad_norm.powf((d - 3.0) / 2.0) * (2.0 * PI * r).powf(-(d - 1.0) / 2.0) / sp.proj_hess_det.sqrt()
}

/// Smooth radial cutoff: `1` on `[0, ½]`, `0` beyond `1`, `C^∞` in between.
pub fn bump(t: f64) -> f64 {
    if t <= 0.5 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let f = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    let u = 2.0 * (1.0 - t);
    f(u) / (f(u) + f(1.0 - u))
}

/// Resolution of the local patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOptions {
    /// Radius of the cutoff `η`; `0` starts from `default_radius` and
    /// shrinks until the surrogate resolves.
    pub eta_radius: f64,
    pub default_radius: f64,
    /// Chebyshev nodes per axis.
    pub nodes: usize,
    /// Accepted trailing-coefficient ratio of the surrogate.
    pub tail_tol: f64,
    pub shrink: f64,
    pub max_shrinks: usize,
    pub inner: QuadTol,
    pub outer: QuadTol,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self {
            eta_radius: 0.0,
            default_radius: 1.0,
            nodes: 64,
            tail_tol: 1e-10,
            shrink: 0.8,
            max_shrinks: 10,
            inner: QuadTol { abs: 1e-13, rel: 1e-9, max_intervals: 4000 },
            outer: QuadTol { abs: 1e-13, rel: 1e-9, max_intervals: 4000 },
        }
    }
}

/// Surrogate of the oriented denominator around `k0 + iβ_s` in rotated
/// coordinates `ξ = (ξ_1, ξ')`, `k − k0 = ξ_1 s + ξ' e_2`.
#[derive(Clone, Debug)]
pub struct LocalPatch {
    pub s: Vec<f64>,
    pub tangent: Vec<f64>,
    pub k0: Vec<f64>,
    pub orientation: f64,
    pub radius: f64,
    pub nodes: usize,
    pub tail_ratio: f64,
    /// Radii tried before `radius` was accepted.
    pub rejected_radii: Vec<f64>,
    denom: Chebyshev2,
    offset: C64,
    /// Right and left eigenvectors at the nodes, row-major like the
    /// surrogate values.
    vectors: Option<(Vec<(Vec<C64>, Vec<C64>)>, usize)>,
    inner: QuadTol,
    outer: QuadTol,
}

impl LocalPatch {
    /// Samples the dispersion on the Chebyshev grid and fits the surrogate.
    pub fn build<M: DispersionModel>(model: &M, sp: &SupportPoint, k0: &[f64], orientation: f64, opts: &PatchOptions) -> Result<Self> {
        if model.dim() != 2 || sp.s.len() != 2 {
            return Err(Error::InvalidInput("the local patch integrals are implemented for d = 2".into()));
        }
        let mut radius = if opts.eta_radius > 0.0 { opts.eta_radius } else { opts.default_radius };
        let mut rejected = Vec::new();
        let center = imaginary(&sp.beta_s);
        let (_, center_state) = model.working_value(&center, None)?;
        let tangent = sp.frame[0].clone();
        loop {
            match sample_patch(model, sp, &tangent, &center_state, radius, opts.nodes) {
                Ok((vals, vectors)) => {
                    let shifted: Vec<C64> = vals.iter().map(|v| v - sp.lambda).collect();
                    let denom = Chebyshev2::from_values(opts.nodes, radius, &shifted);
                    let tail = denom.tail_ratio();
                    if tail <= opts.tail_tol {
                        return Ok(Self {
                            s: sp.s.clone(),
                            tangent,
                            k0: k0.to_vec(),
                            orientation,
                            radius,
                            nodes: opts.nodes,
                            tail_ratio: tail,
                            rejected_radii: rejected,
                            offset: denom.eval(0.0, 0.0),
                            denom,
                            vectors,
                            inner: opts.inner,
                            outer: opts.outer,
                        });
                    }
                }
                Err(Error::ContinuationFailure { .. }) | Err(Error::NoConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
            rejected.push(radius);
            if opts.eta_radius > 0.0 || rejected.len() > opts.max_shrinks {
                return Err(Error::NoConvergence {
                    stage: "local patch surrogate".into(),
                    detail: format!("radii {rejected:?} not resolved with {} nodes", opts.nodes),
                });
            }
            radius *= opts.shrink;
        }
    }

    /// `D(ξ)` from the surrogate, exactly `0` at `ξ = 0`.
    pub fn denominator(&self, xi1: f64, xi2: f64) -> C64 {
        self.denom.eval(xi1, xi2) - self.offset
    }

    fn original(&self, xi1: f64, xi2: f64) -> [f64; 2] {
        [xi1 * self.s[0] + xi2 * self.tangent[0], xi1 * self.s[1] + xi2 * self.tangent[1]]
    }

    /// `(2π)^{−2} ∫ μ(ξ) w(ξ) e^{iξ_1 r} / D(ξ) dξ` by nested adaptive
    /// Gauss–Kronrod, split at `ξ = 0`.
    fn integrate_weighted<W>(&self, r: f64, weight: W) -> Result<C64>
    where
        W: Fn(f64, f64) -> C64,
    {
        let rho = self.radius;
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let outer = |xi2: f64| -> C64 {
            if failure.borrow().is_some() {
                return CZERO;
            }
            let a = (rho * rho - xi2 * xi2).max(0.0).sqrt();
            if a == 0.0 {
                return CZERO;
            }
            let slice = self.denom.slice_at_y(xi2);
            let inner = |xi1: f64| -> C64 {
                let t = (xi1 * xi1 + xi2 * xi2).sqrt() / rho;
                let mu = bump(t);
                if mu == 0.0 {
                    return CZERO;
                }
                let den = clenshaw(&slice, xi1 / rho) - self.offset;
                C64::from_polar(mu, xi1 * r) * weight(xi1, xi2) / den
            };
            match integrate(inner, -a, a, &[0.0], self.inner) {
                Ok((v, _)) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    CZERO
                }
            }
        };
        let (v, _) = integrate(outer, -rho, rho, &[0.0], self.outer)?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v / (4.0 * PI * PI))
    }

    /// The scalar integral `I(r)` for the oriented operator.
    pub fn integral_i(&self, r: f64) -> Result<C64> {
        self.integrate_weighted(r, |_, _| C64::new(1.0, 0.0))
    }

    /// `J_l(r)`: the `I` integrand weighted by `(k − k0)_l`, `l = 1..d`.
    pub fn integral_j(&self, r: f64) -> Result<Vec<C64>> {
        (0..2).map(|l| self.integrate_weighted(r, |a, b| C64::new(self.original(a, b)[l], 0.0))).collect()
    }

    /// Reduced Green's function at `x`, `y` with `(x − y)/|x − y| = s`:
    /// `(2π)^{−2} ∫ η e^{ik·(x−y)} φ₊(x) conj(φ₋(y)) / (F (λ_j(k + iβ_s) − λ)) dk`.
    pub fn reduced_green(&self, x: &[f64], y: &[f64]) -> Result<C64> {
        let diff = [x[0] - y[0], x[1] - y[1]];
        let r = diff[0].hypot(diff[1]);
        if r == 0.0 || (diff[0] / r - self.s[0]).abs() > 1e-12 || (diff[1] / r - self.s[1]).abs() > 1e-12 {
            return Err(Error::InvalidInput("x − y must point along the patch direction".into()));
        }
        let phase = C64::from_polar(1.0, self.k0[0] * diff[0] + self.k0[1] * diff[1]);
        let value = match &self.vectors {
            None => self.integral_i(r)?,
            Some((vecs, cutoff)) => {
                let basis = FourierIndexSet::new(2, *cutoff);
                let px = plane_waves(&basis, x);
                let py = plane_waves(&basis, y);
                let vals: Vec<C64> = vecs
                    .iter()
                    .map(|(v, u)| {
                        let a = px.iter().zip(v).fold(CZERO, |acc, (e, c)| acc + e * c);
                        let b = py.iter().zip(u).fold(CZERO, |acc, (e, c)| acc + e * c);
                        a * b.conj() / dotc(u, v)
                    })
                    .collect();
                let rho = Chebyshev2::from_values(self.nodes, self.radius, &vals);
                self.integrate_weighted(r, |a, b| rho.eval(a, b))?
            }
        };
        Ok(phase * value * self.orientation)
    }
}

type PatchSamples = (Vec<C64>, Option<(Vec<(Vec<C64>, Vec<C64>)>, usize)>);

fn sample_patch<M: DispersionModel>(
    model: &M,
    sp: &SupportPoint,
    tangent: &[f64],
    center: &M::State,
    radius: f64,
    n: usize,
) -> Result<PatchSamples> {
    let nodes = Chebyshev2::nodes(n, radius);
    let kappa = |a: f64, b: f64| -> Vec<C64> {
        (0..2).map(|p| C64::new(a * sp.s[p] + b * tangent[p], sp.beta_s[p])).collect()
    };
    let rows = model.exec().try_map(n, |i| {
        let mut seed = center.clone();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let (v, st) = model.working_value(&kappa(nodes[i], nodes[j]), Some(&seed))?;
            let vecs = model.bloch_vectors(&st);
            out.push((v, vecs));
            seed = st;
        }
        Ok(out)
    })?;
    let mut vals = Vec::with_capacity(n * n);
    let mut vecs = Vec::with_capacity(n * n);
    let mut cutoff = None;
    for row in rows {
        for (v, bv) in row {
            vals.push(v);
            if let Some((a, b, c)) = bv {
                vecs.push((a, b));
                cutoff = Some(c);
            }
        }
    }
    Ok((vals, cutoff.map(|c| (vecs, c))))
}

/// `I(r)` on a freshly built patch of radius `eta_radius` (`0` for adaptive).
pub fn integral_i_numeric<M: DispersionModel>(model: &M, sp: &SupportPoint, eta_radius: f64, r: f64) -> Result<C64> {
    let opts = PatchOptions { eta_radius, ..PatchOptions::default() };
    let d = model.dim();
    LocalPatch::build(model, sp, &vec![0.0; d], 1.0, &opts)?.integral_i(r)
}

/// Reduced Green's function of the edge operator at `x`, `y`.
pub fn reduced_green_numeric<M: DispersionModel>(
    model: &M,
    edge: &BandEdge,
    sp: &SupportPoint,
    x: &[f64],
    y: &[f64],
    opts: &PatchOptions,
) -> Result<C64> {
    LocalPatch::build(model, sp, &edge.k0, edge.orientation, opts)?.reduced_green(x, y)
}

/// Sampled Weierstrass branch `z_1 = A_s(z')` of `W_s(z) = 0` against its
/// quadratic model `½ z'·Q_s z'`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeierstrassCheck {
    pub s: Vec<f64>,
    pub q_s: DMatrix<f64>,
    /// `(z', A_s(z'))`.
    pub samples: Vec<(Vec<C64>, C64)>,
    /// `max |A_s(z') − ½ z'·Q_s z'| / |z'|²` over samples with `z' ≠ 0`.
    pub quadratic_residual: f64,
}

impl WeierstrassCheck {
    pub fn new(sp: &SupportPoint) -> Self {
        Self { s: sp.s.clone(), q_s: sp.q_matrix(), samples: Vec::new(), quadratic_residual: 0.0 }
    }

    /// `½ z'·Q_s z'` (bilinear, no conjugation).
    pub fn quadratic(&self, zp: &[C64]) -> C64 {
        let n = zp.len();
        let mut acc = CZERO;
        for p in 0..n {
            for q in 0..n {
                acc += zp[p] * self.q_s[(p, q)] * zp[q];
            }
        }
        acc * 0.5
    }

    fn record(&mut self, zp: &[C64], a: C64) {
        let n2: f64 = zp.iter().map(|z| z.norm_sqr()).sum();
        if n2 > 0.0 {
            self.quadratic_residual = self.quadratic_residual.max((a - self.quadratic(zp)).norm() / n2);
        }
        self.samples.push((zp.to_vec(), a));
    }

    /// Ratio of `quadratic_residual` values, for a radius and its half.
    pub fn halving_factor(coarse: &WeierstrassCheck, fine: &WeierstrassCheck) -> f64 {
        coarse.quadratic_residual / fine.quadratic_residual
    }
}

/// `W_s(z) = E_w(iβ_s − i(z_1 s + Σ z'_l e_l)) − λ` and `∂W_s/∂z_1`.
fn w_s<M: DispersionModel>(model: &M, sp: &SupportPoint, z1: C64, zp: &[C64], seed: Option<&M::State>) -> Result<(C64, C64, M::State)> {
    let d = sp.s.len();
    let i = C64::new(0.0, 1.0);
    let kappa: Vec<C64> = (0..d)
        .map(|p| {
            let mut w = z1 * sp.s[p];
            for (l, z) in zp.iter().enumerate() {
                w += z * sp.frame[l][p];
            }
            C64::new(0.0, sp.beta_s[p]) - i * w
        })
        .collect();
    let (v, st) = model.working_value(&kappa, seed)?;
    let g = model.working_gradient(&st)?;
    let dz1 = (0..d).fold(CZERO, |acc, p| acc - i * sp.s[p] * g[p]);
    Ok((v - sp.lambda, dz1, st))
}

/// `A_s(z')` by complex Newton in `z_1` from the quadratic prediction;
/// recorded into `check`.
pub fn weierstrass_branch<M: DispersionModel>(
    model: &M,
    sp: &SupportPoint,
    z_prime: &[C64],
    radius: f64,
    check: &mut WeierstrassCheck,
) -> Result<C64> {
    let d = sp.s.len();
    if z_prime.len() + 1 != d {
        return Err(Error::DimensionMismatch { expected: d - 1, got: z_prime.len() });
    }
    let nz = z_prime.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nz > radius * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("|z'| = {nz} exceeds the sampling radius {radius}")));
    }
    let mut z1 = check.quadratic(z_prime);
    let mut seed: Option<M::State> = None;
    let floor = 4.0 * f64::EPSILON * (1.0 + sp.lambda.abs());
    for _ in 0..50 {
        let (w, dw, st) = w_s(model, sp, z1, z_prime, seed.as_ref())?;
        if dw.norm() == 0.0 {
            return Err(Error::NoConvergence { stage: "Weierstrass branch".into(), detail: "∂W/∂z_1 vanished".into() });
        }
        let step = w / dw;
        z1 -= step;
        seed = Some(st);
        if step.norm() <= 1e-15 * (1.0 + z1.norm()) || w.norm() <= floor {
            if nz == 0.0 && z1.norm() > 1e-11 {
                return Err(Error::NoConvergence { stage: "Weierstrass branch".into(), detail: format!("A_s(0) = {z1}") });
            }
            check.record(z_prime, z1);
            return Ok(z1);
        }
    }
    Err(Error::NoConvergence { stage: "Weierstrass branch".into(), detail: format!("z' = {z_prime:?}") })
}

/// Samples `A_s` at `2·count` points `z' = ±radius·e^{iθ}` (`d = 2`) and at
/// `z' = 0`.
pub fn weierstrass_check<M: DispersionModel>(model: &M, sp: &SupportPoint, radius: f64, count: usize) -> Result<WeierstrassCheck> {
    let mut check = WeierstrassCheck::new(sp);
    let d = sp.s.len();
    if d != 2 {
        return Err(Error::InvalidInput("Weierstrass sampling is implemented for d = 2".into()));
    }
    weierstrass_branch(model, sp, &[CZERO], radius, &mut check)?;
    for j in 0..count {
        let theta = PI * j as f64 / count as f64;
        for sign in [1.0, -1.0] {
            let z = C64::from_polar(sign * radius, theta);
            weierstrass_branch(model, sp, &[z], radius, &mut check)?;
        }
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_profile() {
        assert_eq!(bump(0.3), 1.0);
        assert_eq!(bump(1.2), 0.0);
        assert!((bump(0.75) - 0.5).abs() < 1e-15);
        assert!(bump(0.6) > bump(0.9));
    }
}
