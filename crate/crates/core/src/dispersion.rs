//! The band function continued to complex quasimomentum near an edge.
//!
//! With the oriented edge frame of [`crate::bands`], the working eigenvalue
//! at complex displacement `κ` from `k0` is `σ(λ_j(k0 + κ) − e)` and the
//! dispersion is its restriction to the imaginary directions,
//! `E(β) = σ(λ_j(k0 + iβ) − e)`. `E` is real, even and concave near `0`
//! with `Hess E(0) = −H`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bands::BandEdge;
use crate::eigen::{fix_gauge, BranchState, TrackOptions, Tracker};
use crate::error::{Error, Result};
use crate::fd::{self, Jet};
use crate::linalg::{dotc, C64, CZERO};
use crate::operator::{FourierIndexSet, PeriodicOperator};
use crate::par::Exec;

/// Tolerances and steps for dispersion evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionOptions {
    /// Accepted `|Im λ|` is `tol_real·(1 + |E|)`.
    pub tol_real: f64,
    /// Smallest accepted `|F|` for a Bloch pair.
    pub tol_f: f64,
    /// Finite-difference step in `β`.
    pub fd_step: f64,
    /// Two eigenvalues closer than this are treated as ambiguous.
    pub isolation_tol: f64,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self { tol_real: 1e-8, tol_f: 1e-8, fd_step: 1e-3, isolation_tol: 1e-6 }
    }
}

/// Access to the working eigenvalue at complex displacements from `k0`.
///
/// `State` carries whatever is needed to continue the branch from a nearby
/// point; evaluations seeded from a state close to the target are cheap.
pub trait DispersionModel: Sync + Send {
    type State: Clone + Send + Sync;

    fn dim(&self) -> usize;

    /// Oriented edge Hessian `H`.
    fn edge_hessian(&self) -> &DMatrix<f64>;

    /// `σ(λ_j(k0 + κ) − e)` continued from `seed`, or from the edge.
    fn working_value(&self, kappa: &[C64], seed: Option<&Self::State>) -> Result<(C64, Self::State)>;

    /// `∂/∂κ` of the working value at a state returned by `working_value`.
    fn working_gradient(&self, state: &Self::State) -> Result<Vec<C64>>;

    fn options(&self) -> &DispersionOptions;

    fn exec(&self) -> Exec {
        Exec::Sequential
    }

    /// Right and left eigenvector coefficients at a state, with the basis
    /// cutoff, when the model carries Bloch functions.
    fn bloch_vectors(&self, _state: &Self::State) -> Option<(Vec<C64>, Vec<C64>, usize)> {
        None
    }
}

/// `iβ` as a complex displacement.
pub fn imaginary(beta: &[f64]) -> Vec<C64> {
    beta.iter().map(|&b| C64::new(0.0, b)).collect()
}

/// `E(β)` with its reality check.
pub fn energy<M: DispersionModel>(model: &M, beta: &[f64], seed: Option<&M::State>) -> Result<(f64, f64, M::State)> {
    let (z, st) = model.working_value(&imaginary(beta), seed)?;
    let tol = model.options().tol_real * (1.0 + z.re.abs());
    if z.im.abs() > tol {
        return Err(Error::RealityDefect { defect: z.im.abs(), tol, at: format!("{beta:?}") });
    }
    Ok((z.re, z.im.abs(), st))
}

/// `E` and the exact `∇E` at `β`; `∂E/∂β = i ∂/∂κ` of the working value.
pub fn energy_gradient<M: DispersionModel>(model: &M, beta: &[f64], seed: Option<&M::State>) -> Result<(f64, Vec<f64>, f64, M::State)> {
    let (e, defect, st) = energy(model, beta, seed)?;
    let g = model.working_gradient(&st)?;
    Ok((e, g.iter().map(|z| -z.im).collect(), defect, st))
}

/// `E`, `∇E` and `Hess E` at `β`; the Hessian by Richardson central
/// differences of the exact gradient.
pub fn energy_jet<M: DispersionModel>(model: &M, beta: &[f64], seed: Option<&M::State>) -> Result<(Jet, f64, M::State)> {
    let (_, _, defect, st) = energy_gradient(model, beta, seed)?;
    let f = |b: &[f64]| energy_gradient(model, b, Some(&st)).map(|r| (r.0, r.1));
    let jet = fd::jet_from_gradient(f, beta, model.options().fd_step, model.exec())?;
    Ok((jet, defect, st))
}

/// Exact quadratic dispersion `λ(k0 + κ) = ½ κᵀ M κ`, so `E(β) = −½ βᵀ M β`.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    pub m: DMatrix<f64>,
    pub opts: DispersionOptions,
}

impl QuadraticModel {
    pub fn new(m: DMatrix<f64>) -> Self {
        Self { m, opts: DispersionOptions::default() }
    }
}

impl DispersionModel for QuadraticModel {
    type State = Vec<C64>;

    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn edge_hessian(&self) -> &DMatrix<f64> {
        &self.m
    }

    fn working_value(&self, kappa: &[C64], _seed: Option<&Vec<C64>>) -> Result<(C64, Vec<C64>)> {
        let d = self.dim();
        if kappa.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: kappa.len() });
        }
        let mut acc = CZERO;
        for p in 0..d {
            for q in 0..d {
                acc += kappa[p] * self.m[(p, q)] * kappa[q];
            }
        }
        Ok((acc * 0.5, kappa.to_vec()))
    }

    fn working_gradient(&self, kappa: &Vec<C64>) -> Result<Vec<C64>> {
        let d = self.dim();
        Ok((0..d).map(|p| (0..d).fold(CZERO, |acc, q| acc + kappa[q] * self.m[(p, q)])).collect())
    }

    fn options(&self) -> &DispersionOptions {
        &self.opts
    }
}

/// Dispersion of a periodic operator at a located edge, by branch tracking.
#[derive(Clone, Debug)]
pub struct BandDispersion<'a> {
    pub op: &'a PeriodicOperator,
    pub edge: &'a BandEdge,
    pub basis: FourierIndexSet,
    pub track: TrackOptions,
    pub opts: DispersionOptions,
    pub exec: Exec,
    base: BranchState,
}

impl<'a> BandDispersion<'a> {
    /// Starts the branch at `k0` with a Hermitian solve on the edge cutoff.
    pub fn new(op: &'a PeriodicOperator, edge: &'a BandEdge, opts: DispersionOptions, exec: Exec) -> Result<Self> {
        let basis = FourierIndexSet::new(op.dim(), edge.cutoff);
        let track = TrackOptions { jump_tol: edge.epsilon0.max(1e-6), ..TrackOptions::default() };
        let base = Tracker::new(op, &basis, track.clone()).start(&edge.k0, edge.band_index)?;
        Ok(Self { op, edge, basis, track, opts, exec, base })
    }

    pub fn tracker(&self) -> Tracker<'_> {
        Tracker::new(self.op, &self.basis, self.track.clone())
    }

    /// Branch state at `k0`.
    pub fn base(&self) -> &BranchState {
        &self.base
    }

    /// Branch state at `k0 + κ`.
    pub fn state_at(&self, kappa: &[C64], seed: Option<&BranchState>) -> Result<BranchState> {
        let k: Vec<C64> = self.edge.k0.iter().zip(kappa).map(|(&a, b)| b + a).collect();
        self.tracker().step(seed.unwrap_or(&self.base), &k)
    }

    fn working(&self, st: &BranchState) -> C64 {
        (st.value - self.edge.edge_energy) * self.edge.orientation
    }
}

impl DispersionModel for BandDispersion<'_> {
    type State = BranchState;

    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn edge_hessian(&self) -> &DMatrix<f64> {
        &self.edge.hessian
    }

    fn working_value(&self, kappa: &[C64], seed: Option<&BranchState>) -> Result<(C64, BranchState)> {
        let st = self.state_at(kappa, seed)?;
        Ok((self.working(&st), st))
    }

    fn working_gradient(&self, state: &BranchState) -> Result<Vec<C64>> {
        Ok(self.tracker().gradient(state)?.into_iter().map(|g| g * self.edge.orientation).collect())
    }

    fn options(&self) -> &DispersionOptions {
        &self.opts
    }

    fn exec(&self) -> Exec {
        self.exec
    }

    fn bloch_vectors(&self, state: &BranchState) -> Option<(Vec<C64>, Vec<C64>, usize)> {
        Some((state.right.clone(), state.left.clone(), self.edge.cutoff))
    }
}

/// `E`, `∇E`, `Hess E` and branch data at one `β`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersionSample {
    pub beta: Vec<f64>,
    pub energy: f64,
    pub grad: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub eigvec: Vec<C64>,
    pub reality_defect: f64,
    pub isolation_margin: f64,
    /// Eigenpair residual of the tracked solve.
    pub residual: f64,
}

impl DispersionSample {
    /// Largest eigenvalue of `Hess E`.
    pub fn max_curvature(&self) -> f64 {
        self.hessian.clone().symmetric_eigenvalues().max()
    }
}

/// Samples the dispersion at `β`, with a dense non-Hermitian solve for the
/// isolation margin.
pub fn dispersion_at(model: &BandDispersion<'_>, beta: &[f64], seed: Option<&BranchState>) -> Result<DispersionSample> {
    if beta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: beta.len() });
    }
    let (jet, defect, st) = energy_jet(model, beta, seed)?;
    let (margin, competitor) = model.tracker().isolation(&st)?;
    if margin < model.opts.isolation_tol {
        return Err(Error::BranchAmbiguity {
            at: format!("beta = {beta:?}"),
            tracked: format!("{}", st.value),
            competitor: format!("{competitor}"),
        });
    }
    Ok(DispersionSample {
        beta: beta.to_vec(),
        energy: jet.value,
        grad: jet.grad,
        hessian: jet.hess,
        eigvec: st.right.clone(),
        reality_defect: defect,
        isolation_margin: margin,
        residual: st.residual,
    })
}

/// Step control for [`continue_ray`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub t_max: f64,
    pub dt: f64,
    /// Hessian counts as negative definite while its top eigenvalue is `≤ −delta`.
    pub delta: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { t_max: 2.0, dt: 0.05, delta: 1e-8 }
    }
}

/// Walks `β = t·u` from `t = 0`, one sample per step, stopping at `t_max`
/// or at the first sample whose Hessian is not negative definite (that
/// sample is included).
pub fn continue_ray(model: &BandDispersion<'_>, direction: &[f64], ctl: &StepControl) -> Result<Vec<DispersionSample>> {
    let (samples, failure) = continue_ray_partial(model, direction, ctl)?;
    match failure {
        None => Ok(samples),
        Some(reason) => Err(Error::ContinuationFailure { last_good_t: samples.last().map_or(0.0, sample_t), reason }),
    }
}

fn sample_t(s: &DispersionSample) -> f64 {
    s.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
}

/// Samples along the ray up to the first failure, with that failure's message.
pub fn continue_ray_partial(model: &BandDispersion<'_>, direction: &[f64], ctl: &StepControl) -> Result<(Vec<DispersionSample>, Option<String>)> {
    let nrm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (nrm - 1.0).abs() > 1e-10 || direction.len() != model.dim() {
        return Err(Error::InvalidInput(format!("direction must be a unit {}-vector, |u| = {nrm}", model.dim())));
    }
    if !(ctl.dt > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let mut out = Vec::new();
    let mut state: Option<BranchState> = None;
    let t_max = ctl.t_max.max(0.0);
    let n_steps = (t_max / ctl.dt).ceil() as usize;
    for i in 0..=n_steps {
        let t = (i as f64 * ctl.dt).min(t_max);
        let beta: Vec<f64> = direction.iter().map(|u| u * t).collect();
        let sample = model
            .state_at(&imaginary(&beta), state.as_ref())
            .and_then(|st| dispersion_at(model, &beta, Some(&st)).map(|s| (s, st)));
        let (sample, st) = match sample {
            Ok(v) => v,
            Err(e) => return Ok((out, Some(format!("at t = {t}: {e}")))),
        };
        let concave = sample.max_curvature() <= -ctl.delta;
        out.push(sample);
        state = Some(st);
        if !concave && i > 0 {
            break;
        }
    }
    Ok((out, None))
}

/// Largest radius such that along every direction all samples up to it are
/// concave and pass the reality check. With a single direction the result
/// is that ray's radius and is not conservative.
pub fn concavity_radius(model: &BandDispersion<'_>, directions: &[Vec<f64>], ctl: &StepControl) -> Result<f64> {
    if directions.is_empty() {
        return Err(Error::InvalidInput("no directions".into()));
    }
    let radii = model.exec.try_map(directions.len(), |i| ray_radius(model, &directions[i], ctl))?;
    let r = radii.into_iter().fold(f64::INFINITY, f64::min);
    if r <= 0.0 {
        return Err(Error::InvalidInput("concavity radius is zero: assumptions fail at the edge".into()));
    }
    Ok(r)
}

fn ray_radius(model: &BandDispersion<'_>, dir: &[f64], ctl: &StepControl) -> Result<f64> {
    let (samples, failure) = continue_ray_partial(model, dir, ctl)?;
    let mut good = 0.0;
    for s in &samples {
        let t = sample_t(s);
        if t > 0.0 && s.max_curvature() > -ctl.delta {
            return Ok(good);
        }
        good = t;
    }
    Ok(if failure.is_none() { ctl.t_max.max(0.0) } else { good })
}

/// Eigenvectors at `k0 ± iβ` and their pairing `F = Σ φ₊_m conj(φ₋_m)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlochPair {
    pub beta: Vec<f64>,
    pub d: usize,
    pub cutoff: usize,
    pub phi_plus: Vec<C64>,
    pub phi_minus: Vec<C64>,
    pub pairing: C64,
}

impl BlochPair {
    /// Pair of constant functions (a single plane wave), as for the free
    /// operator at `k0 = 0` or a quadratic model.
    pub fn constant(beta: &[f64]) -> Self {
        let one = vec![C64::new(1.0, 0.0)];
        Self { beta: beta.to_vec(), d: beta.len(), cutoff: 0, phi_plus: one.clone(), phi_minus: one, pairing: C64::new(1.0, 0.0) }
    }

    /// Builds a pair from two coefficient vectors, fixing gauges and pairing.
    pub fn from_vectors(beta: &[f64], cutoff: usize, mut plus: Vec<C64>, mut minus: Vec<C64>, tol_f: f64) -> Result<Self> {
        fix_gauge(&mut plus);
        fix_gauge(&mut minus);
        let pairing = dotc(&minus, &plus);
        if pairing.norm() < tol_f {
            return Err(Error::DegeneratePairing { value: pairing.norm(), tol: tol_f });
        }
        Ok(Self { beta: beta.to_vec(), d: beta.len(), cutoff, phi_plus: plus, phi_minus: minus, pairing })
    }
}

/// Independent solves at `k0 + iβ` and `k0 − iβ`.
pub fn bloch_pair(model: &BandDispersion<'_>, beta: &[f64]) -> Result<BlochPair> {
    let plus = model.state_at(&imaginary(beta), None)?;
    let neg: Vec<f64> = beta.iter().map(|b| -b).collect();
    let minus = model.state_at(&imaginary(&neg), None)?;
    for st in [&plus, &minus] {
        let (margin, competitor) = model.tracker().isolation(st)?;
        if margin < model.opts.isolation_tol {
            return Err(Error::BranchAmbiguity {
                at: format!("k = {:?}", st.k),
                tracked: format!("{}", st.value),
                competitor: format!("{competitor}"),
            });
        }
    }
    BlochPair::from_vectors(beta, model.edge.cutoff, plus.right, minus.right, model.opts.tol_f)
}

/// Periodic Bloch factors `(φ₊(x), φ₋(x))` as Fourier sums at the
/// fractional part of `x`.
pub fn evaluate_bloch(pair: &BlochPair, x: &[f64]) -> (C64, C64) {
    let basis = FourierIndexSet::new(pair.d, pair.cutoff);
    let phases = plane_waves(&basis, x);
    let a = phases.iter().zip(&pair.phi_plus).fold(CZERO, |acc, (e, c)| acc + e * c);
    let b = phases.iter().zip(&pair.phi_minus).fold(CZERO, |acc, (e, c)| acc + e * c);
    (a, b)
}

/// `e^{2πi m·x̄}` for every basis index.
pub fn plane_waves(basis: &FourierIndexSet, x: &[f64]) -> Vec<C64> {
    let d = basis.dim();
    let n = basis.cutoff() as i32;
    let tables: Vec<Vec<C64>> = (0..d)
        .map(|p| {
            let xf = x[p] - x[p].floor();
            (-n..=n).map(|m| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 * xf)).collect()
        })
        .collect();
    basis
        .indices()
        .iter()
        .map(|m| (0..d).fold(C64::new(1.0, 0.0), |acc, p| acc * tables[p][(m[p] + n) as usize]))
        .collect()
}
