//! Periodic operators `L = D* A(x) D + V(x)` on the unit lattice and their
//! plane-wave fiber matrices.
//!
//! Coefficients are trigonometric polynomials: `A(x) = Σ_n Â_n e^{2πi n·x}`
//! and likewise for `V`. The fiber operator at quasimomentum `k` acts on the
//! plane waves `e^{2πi m·x}`, `‖m‖_∞ ≤ N`, as
//!
//! ```text
//! M(k)_{m,m'} = Σ_{p,q} (2πm_p + k_p) Â^{pq}_{m-m'} (2πm'_q + k_q) + V̂_{m-m'}
//! ```
//!
//! which is exact: truncation is the only approximation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{C64, CZERO};

/// Lattice index in at most three dimensions; unused slots are zero.
pub type Index = [i32; 3];

const REALITY_TOL: f64 = 1e-12;

/// Periodic elliptic operator described by finitely many Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOperator {
    d: usize,
    metric: BTreeMap<Index, Vec<C64>>,
    potential: BTreeMap<Index, C64>,
    ellipticity_floor: f64,
}

impl PeriodicOperator {
    /// Builds and validates an operator.
    ///
    /// `metric` maps a lattice index to a row-major `d×d` coefficient matrix.
    /// When `ellipticity_floor` is `None`, the sampled minimum of the smallest
    /// eigenvalue of `A(x)` is used.
    pub fn new(
        d: usize,
        metric: BTreeMap<Index, Vec<C64>>,
        potential: BTreeMap<Index, C64>,
        ellipticity_floor: Option<f64>,
    ) -> Result<Self> {
        let mut op = Self::new_unchecked(d, metric, potential, 1.0)?;
        op.check_reality()?;
        let sampled = op.sampled_ellipticity()?;
        let floor = ellipticity_floor.unwrap_or(sampled);
        if !(floor > 0.0) {
            return Err(Error::InvalidOperator(format!("ellipticity floor must be positive, got {floor}")));
        }
        if sampled < floor {
            return Err(Error::InvalidOperator(format!(
                "sampled ellipticity {sampled:.6e} below floor {floor:.6e}"
            )));
        }
        op.ellipticity_floor = floor;
        Ok(op)
    }

    /// Builds an operator without reality, symmetry or ellipticity checks.
    ///
    /// Only shapes are verified. Useful for probing diagnostics with
    /// deliberately corrupted data.
    pub fn new_unchecked(
        d: usize,
        metric: BTreeMap<Index, Vec<C64>>,
        potential: BTreeMap<Index, C64>,
        ellipticity_floor: f64,
    ) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidOperator(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        for (n, a) in &metric {
            if a.len() != d * d {
                return Err(Error::InvalidOperator(format!("metric entry {n:?} is not {d}x{d}")));
            }
        }
        for n in metric.keys().chain(potential.keys()) {
            if n[d..].iter().any(|&c| c != 0) {
                return Err(Error::InvalidOperator(format!("index {n:?} has components beyond d = {d}")));
            }
        }
        Ok(Self { d, metric, potential, ellipticity_floor })
    }

    /// Free operator `-Δ` in dimension `d`.
    pub fn free(d: usize) -> Self {
        let mut metric = BTreeMap::new();
        metric.insert([0; 3], identity(d));
        Self::new(d, metric, BTreeMap::new(), Some(1.0)).expect("free operator is valid")
    }

    /// `-Δ + 2q Σ_p cos(2π x_p)`, the separable Mathieu operator.
    pub fn separable_mathieu(d: usize, q: f64) -> Self {
        let mut metric = BTreeMap::new();
        metric.insert([0; 3], identity(d));
        let mut potential = BTreeMap::new();
        for p in 0..d {
            let mut n = [0; 3];
            n[p] = 1;
            potential.insert(n, C64::new(q, 0.0));
            n[p] = -1;
            potential.insert(n, C64::new(q, 0.0));
        }
        Self::new(d, metric, potential, Some(1.0)).expect("mathieu operator is valid")
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Ellipticity floor θ.
    pub fn ellipticity_floor(&self) -> f64 {
        self.ellipticity_floor
    }

    /// Fourier coefficients of `A`, row-major.
    pub fn metric_coeffs(&self) -> &BTreeMap<Index, Vec<C64>> {
        &self.metric
    }

    /// Fourier coefficients of `V`.
    pub fn potential_coeffs(&self) -> &BTreeMap<Index, C64> {
        &self.potential
    }

    /// Largest `‖n‖_∞` among stored coefficients.
    pub fn bandwidth(&self) -> i32 {
        self.metric
            .keys()
            .chain(self.potential.keys())
            .map(|n| n.iter().map(|c| c.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    fn check_reality(&self) -> Result<()> {
        let d = self.d;
        for (n, a) in &self.metric {
            let neg = negate(n);
            let other = self.metric.get(&neg);
            for p in 0..d {
                for q in 0..d {
                    let v = a[p * d + q];
                    let w = other.map(|o| o[p * d + q]).unwrap_or(CZERO);
                    if (v - w.conj()).norm() > REALITY_TOL {
                        return Err(Error::InvalidOperator(format!(
                            "metric coefficient {n:?} violates A_(-n) = conj(A_n)"
                        )));
                    }
                    if (v - a[q * d + p]).norm() > REALITY_TOL {
                        return Err(Error::InvalidOperator(format!("metric coefficient {n:?} is not symmetric")));
                    }
                }
            }
        }
        for (n, v) in &self.potential {
            let w = self.potential.get(&negate(n)).copied().unwrap_or(CZERO);
            if (*v - w.conj()).norm() > REALITY_TOL {
                return Err(Error::InvalidOperator(format!(
                    "potential coefficient {n:?} violates V_(-n) = conj(V_n)"
                )));
            }
        }
        Ok(())
    }

    /// Minimum over a `16^d` spatial grid of the smallest eigenvalue of `A(x)`.
    pub fn sampled_ellipticity(&self) -> Result<f64> {
        let res = 16usize;
        let total = res.pow(self.d as u32);
        let mut min = f64::INFINITY;
        for flat in 0..total {
            let mut x = [0.0; 3];
            let mut rem = flat;
            for xp in x.iter_mut().take(self.d) {
                *xp = (rem % res) as f64 / res as f64;
                rem /= res;
            }
            let (a, _) = self.evaluate_coefficients(&x[..self.d])?;
            let ev = a.symmetric_eigenvalues();
            min = min.min(ev.min());
        }
        Ok(min)
    }

    /// Evaluates `A(x)` and `V(x)` from the stored Fourier sums.
    ///
    /// Imaginary parts up to `1e-12` (relative to the coefficient scale) are
    /// discarded; larger ones signal corrupted coefficients.
    pub fn evaluate_coefficients(&self, x: &[f64]) -> Result<(DMatrix<f64>, f64)> {
        let d = self.d;
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let phase = |n: &Index| {
            let t: f64 = (0..d).map(|p| n[p] as f64 * x[p]).sum();
            C64::from_polar(1.0, 2.0 * PI * t)
        };
        let mut a = vec![CZERO; d * d];
        let mut scale = 0.0f64;
        for (n, c) in &self.metric {
            let e = phase(n);
            for (acc, v) in a.iter_mut().zip(c) {
                *acc += v * e;
                scale = scale.max(v.norm());
            }
        }
        let mut v = CZERO;
        for (n, c) in &self.potential {
            v += c * phase(n);
            scale = scale.max(c.norm());
        }
        let tol = REALITY_TOL * (1.0 + scale);
        if a.iter().any(|z| z.im.abs() > tol) || v.im.abs() > tol {
            return Err(Error::InvalidOperator("coefficients are not real-valued".into()));
        }
        Ok((DMatrix::from_fn(d, d, |p, q| a[p * d + q].re), v.re))
    }

    /// Canonical description, used for files and hashing.
    pub fn to_spec(&self) -> OperatorSpec {
        let d = self.d;
        let scalar = |z: C64| if z.im == 0.0 { Scalar::Real(z.re) } else { Scalar::Complex([z.re, z.im]) };
        OperatorSpec {
            dimension: d,
            ellipticity_floor: Some(self.ellipticity_floor),
            metric: self
                .metric
                .iter()
                .map(|(n, a)| MetricTerm {
                    index: n[..d].to_vec(),
                    matrix: (0..d).map(|p| (0..d).map(|q| scalar(a[p * d + q])).collect()).collect(),
                })
                .collect(),
            potential: self
                .potential
                .iter()
                .map(|(n, v)| PotentialTerm { index: n[..d].to_vec(), value: scalar(*v) })
                .collect(),
        }
    }

    /// Builds an operator from its file description.
    pub fn from_spec(spec: &OperatorSpec) -> Result<Self> {
        let d = spec.dimension;
        let index = |v: &[i32]| -> Result<Index> {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            let mut n = [0; 3];
            n[..d].copy_from_slice(v);
            Ok(n)
        };
        let mut metric: BTreeMap<Index, Vec<C64>> = BTreeMap::new();
        for t in &spec.metric {
            if t.matrix.len() != d || t.matrix.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidOperator(format!("metric matrix at {:?} is not {d}x{d}", t.index)));
            }
            let entry = metric.entry(index(&t.index)?).or_insert_with(|| vec![CZERO; d * d]);
            for (p, row) in t.matrix.iter().enumerate() {
                for (q, s) in row.iter().enumerate() {
                    entry[p * d + q] += s.value();
                }
            }
        }
        let mut potential: BTreeMap<Index, C64> = BTreeMap::new();
        for t in &spec.potential {
            *potential.entry(index(&t.index)?).or_insert(CZERO) += t.value.value();
        }
        Self::new(d, metric, potential, spec.ellipticity_floor)
    }

    /// Parses a TOML operator file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: OperatorSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_spec(&spec)
    }

    /// Serializes to TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_spec()).expect("operator spec serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&self.to_spec()).expect("operator spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn identity(d: usize) -> Vec<C64> {
    (0..d * d).map(|i| if i % (d + 1) == 0 { C64::new(1.0, 0.0) } else { CZERO }).collect()
}

fn negate(n: &Index) -> Index {
    [-n[0], -n[1], -n[2]]
}

/// Real or complex scalar in an operator file: `1.5` or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn value(&self) -> C64 {
        match *self {
            Scalar::Real(r) => C64::new(r, 0.0),
            Scalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

/// One Fourier coefficient of the metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricTerm {
    pub index: Vec<i32>,
    pub matrix: Vec<Vec<Scalar>>,
}

/// One Fourier coefficient of the potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialTerm {
    pub index: Vec<i32>,
    pub value: Scalar,
}

/// File form of a [`PeriodicOperator`].
///
/// ```toml
/// dimension = 2
/// [[metric]]
/// index = [0, 0]
/// matrix = [[1.0, 0.0], [0.0, 1.0]]
/// [[potential]]
/// index = [1, 0]
/// value = 5.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipticity_floor: Option<f64>,
    #[serde(default)]
    pub metric: Vec<MetricTerm>,
    #[serde(default)]
    pub potential: Vec<PotentialTerm>,
}

/// Plane-wave index set `{m : ‖m‖_∞ ≤ N}` in lexicographic order, first
/// coordinate slowest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FourierIndexSet {
    d: usize,
    cutoff: usize,
    indices: Vec<Index>,
}

impl FourierIndexSet {
    pub fn new(d: usize, cutoff: usize) -> Self {
        let side = 2 * cutoff + 1;
        let total = side.pow(d as u32);
        let n = cutoff as i32;
        let indices = (0..total)
            .map(|flat| {
                let mut m = [0; 3];
                let mut rem = flat;
                for p in (0..d).rev() {
                    m[p] = (rem % side) as i32 - n;
                    rem /= side;
                }
                m
            })
            .collect();
        Self { d, cutoff, indices }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    /// Position of `m` in the enumeration, if inside the cube.
    pub fn position(&self, m: &Index) -> Option<usize> {
        let n = self.cutoff as i32;
        let side = 2 * self.cutoff + 1;
        let mut pos = 0usize;
        for &c in m.iter().take(self.d) {
            if c.abs() > n {
                return None;
            }
            pos = pos * side + (c + n) as usize;
        }
        Some(pos)
    }

    /// Position of the zero mode.
    pub fn zero_position(&self) -> usize {
        self.len() / 2
    }
}

/// Dense fiber matrix `M(k)` on a given index set.
#[derive(Clone, Debug)]
pub struct FiberMatrix {
    pub k: Vec<C64>,
    pub cutoff: usize,
    pub entries: DMatrix<C64>,
}

/// Assembles `M(k)` for real or complex quasimomentum `k`.
pub fn assemble_fiber(op: &PeriodicOperator, k: &[C64], basis: &FourierIndexSet) -> Result<FiberMatrix> {
    let d = op.dim();
    if k.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.len() });
    }
    if basis.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: basis.dim() });
    }
    if basis.is_empty() {
        return Err(Error::InvalidInput("empty basis".into()));
    }
    let n = basis.len();
    let idx = basis.indices();
    let xi: Vec<[C64; 3]> = idx
        .iter()
        .map(|m| {
            let mut v = [CZERO; 3];
            for p in 0..d {
                v[p] = k[p] + 2.0 * PI * m[p] as f64;
            }
            v
        })
        .collect();
    let mut mat = DMatrix::<C64>::zeros(n, n);
    for (shift, a) in op.metric_coeffs() {
        for (col, mp) in idx.iter().enumerate() {
            let m = [mp[0] + shift[0], mp[1] + shift[1], mp[2] + shift[2]];
            let Some(row) = basis.position(&m) else { continue };
            let mut acc = CZERO;
            for p in 0..d {
                for q in 0..d {
                    acc += xi[row][p] * a[p * d + q] * xi[col][q];
                }
            }
            mat[(row, col)] += acc;
        }
    }
    for (shift, v) in op.potential_coeffs() {
        for (col, mp) in idx.iter().enumerate() {
            let m = [mp[0] + shift[0], mp[1] + shift[1], mp[2] + shift[2]];
            if let Some(row) = basis.position(&m) {
                mat[(row, col)] += *v;
            }
        }
    }
    Ok(FiberMatrix { k: k.to_vec(), cutoff: basis.cutoff(), entries: mat })
}

/// `(u^H ∂M/∂k_r v)_r` at `k`, the bilinear forms of the fiber derivatives.
pub fn fiber_derivative_forms(
    op: &PeriodicOperator,
    k: &[C64],
    basis: &FourierIndexSet,
    u: &[C64],
    v: &[C64],
) -> Result<Vec<C64>> {
    let d = op.dim();
    if k.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.len() });
    }
    let idx = basis.indices();
    let xi: Vec<[C64; 3]> = idx
        .iter()
        .map(|m| {
            let mut w = [CZERO; 3];
            for p in 0..d {
                w[p] = k[p] + 2.0 * PI * m[p] as f64;
            }
            w
        })
        .collect();
    let mut out = vec![CZERO; d];
    for (shift, a) in op.metric_coeffs() {
        for (col, mp) in idx.iter().enumerate() {
            let m = [mp[0] + shift[0], mp[1] + shift[1], mp[2] + shift[2]];
            let Some(row) = basis.position(&m) else { continue };
            let w = u[row].conj() * v[col];
            if w == CZERO {
                continue;
            }
            for r in 0..d {
                let mut acc = CZERO;
                for q in 0..d {
                    acc += a[r * d + q] * xi[col][q] + xi[row][q] * a[q * d + r];
                }
                out[r] += w * acc;
            }
        }
    }
    Ok(out)
}

/// Real quasimomentum as a complex vector.
pub fn real_k(k: &[f64]) -> Vec<C64> {
    k.iter().map(|&v| C64::new(v, 0.0)).collect()
}

/// `k_re + i k_im` as a complex vector.
pub fn complex_k(k_re: &[f64], k_im: &[f64]) -> Vec<C64> {
    k_re.iter().zip(k_im).map(|(&a, &b)| C64::new(a, b)).collect()
}

/// `max |M(k)^H - M(conj k)|`; zero up to rounding for valid operators.
pub fn hermiticity_residual(op: &PeriodicOperator, k: &[C64], basis: &FourierIndexSet) -> Result<f64> {
    let m = assemble_fiber(op, k, basis)?;
    let kc: Vec<C64> = k.iter().map(|z| z.conj()).collect();
    let mc = assemble_fiber(op, &kc, basis)?;
    let diff = m.entries.adjoint() - mc.entries;
    Ok(diff.iter().fold(0.0, |acc, v| acc.max(v.norm())))
}
