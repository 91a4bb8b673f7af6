//! Dense complex linear algebra used by the eigen-solvers and the oracle.
//!
//! The LU factorization lives here rather than being delegated to nalgebra
//! because the tracked eigen-solvers need adjoint solves against the same
//! factors (left eigenvectors), and the oracle factorizes tens of thousands
//! of small matrices where a tight column-major loop matters.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Complex zero.
pub const CZERO: C64 = C64::new(0.0, 0.0);
/// Complex one.
pub const CONE: C64 = C64::new(1.0, 0.0);

/// LU factorization with partial pivoting, `P A = L U`, column-major.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    a: Vec<C64>,
    perm: Vec<usize>,
    min_pivot: f64,
}

impl Lu {
    /// Factorizes `m - shift * I`.
    ///
    /// Fails only on an exactly zero pivot; near-singularity is reported by
    /// [`Lu::min_pivot`].
    pub fn factor_shifted(m: &DMatrix<C64>, shift: C64) -> Result<Self> {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        let mut a = m.as_slice().to_vec();
        for i in 0..n {
            a[i * n + i] -= shift;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let col = k * n;
            let mut p = k;
            let mut best = a[col + k].norm_sqr();
            for i in (k + 1)..n {
                let v = a[col + i].norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular { index: k });
            }
            if p != k {
                perm.swap(k, p);
                for j in 0..n {
                    a.swap(j * n + k, j * n + p);
                }
            }
            let piv = a[col + k];
            min_pivot = min_pivot.min(piv.norm());
            let inv = CONE / piv;
            for i in (k + 1)..n {
                a[col + i] *= inv;
            }
            let (head, tail) = a.split_at_mut((k + 1) * n);
            let lcol = &head[col + k + 1..col + n];
            for j in (k + 1)..n {
                let cj = &mut tail[(j - k - 1) * n..(j - k) * n];
                let f = cj[k];
                if f == CZERO {
                    continue;
                }
                for (x, l) in cj[k + 1..].iter_mut().zip(lcol) {
                    *x -= f * *l;
                }
            }
        }
        Ok(Lu { n, a, perm, min_pivot })
    }

    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot modulus encountered.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [C64]) {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            let xk = x[k];
            if xk != CZERO {
                let col = &self.a[k * n + k + 1..(k + 1) * n];
                for (xi, l) in x[k + 1..].iter_mut().zip(col) {
                    *xi -= xk * *l;
                }
            }
        }
        for k in (0..n).rev() {
            x[k] /= self.a[k * n + k];
            let xk = x[k];
            if xk != CZERO {
                let col = &self.a[k * n..k * n + k];
                for (xi, u) in x[..k].iter_mut().zip(col) {
                    *xi -= xk * *u;
                }
            }
        }
        b.copy_from_slice(&x);
    }

    /// Solves `A^H x = b` in place.
    pub fn solve_adjoint(&self, b: &mut [C64]) {
        let n = self.n;
        let mut z = b.to_vec();
        // U^H z = b: forward, column k of U is row k of U^H.
        for k in 0..n {
            let col = &self.a[k * n..k * n + k];
            let mut acc = z[k];
            for (zi, u) in z[..k].iter().zip(col) {
                acc -= u.conj() * *zi;
            }
            z[k] = acc / self.a[k * n + k].conj();
        }
        // L^H w = z: backward.
        for k in (0..n).rev() {
            let col = &self.a[k * n + k + 1..(k + 1) * n];
            let mut acc = z[k];
            for (zi, l) in z[k + 1..].iter().zip(col) {
                acc -= l.conj() * *zi;
            }
            z[k] = acc;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = z[k];
        }
    }
}

/// Hermitian eigen-decomposition with eigenvalues sorted ascending.
///
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-15, 0).ok_or(Error::EigenFailure {
        context: "hermitian eigensolver did not converge".into(),
    })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Sorted eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-15, 0).ok_or(Error::EigenFailure {
        context: "hermitian eigensolver did not converge".into(),
    })?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// All eigenvalues of a general complex matrix via the Schur form.
pub fn general_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let schur = Schur::try_new(m.clone(), 1e-15, 0).ok_or(Error::EigenFailure {
        context: "schur decomposition did not converge".into(),
    })?;
    let ev = schur.eigenvalues().ok_or(Error::EigenFailure {
        context: "schur form not triangular".into(),
    })?;
    Ok(ev.iter().copied().collect())
}

/// `x^H y`.
pub fn dotc(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).fold(CZERO, |acc, (a, b)| acc + a.conj() * *b)
}

/// Euclidean norm.
pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Scales `x` to unit Euclidean norm.
pub fn normalize(x: &mut [C64]) {
    let nrm = norm(x);
    if nrm > 0.0 {
        let inv = 1.0 / nrm;
        x.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Matrix-vector product `m x`.
pub fn matvec(m: &DMatrix<C64>, x: &[C64]) -> Vec<C64> {
    let n = m.nrows();
    let mut y = vec![CZERO; n];
    let data = m.as_slice();
    for (j, xj) in x.iter().enumerate() {
        if *xj == CZERO {
            continue;
        }
        for (yi, a) in y.iter_mut().zip(&data[j * n..(j + 1) * n]) {
            *yi += *a * *xj;
        }
    }
    y
}

/// Maximum absolute entry.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.norm()))
}

/// Determinant of a small real symmetric matrix via LU (nalgebra).
pub fn det_real(m: &DMatrix<f64>) -> f64 {
    m.clone().determinant()
}

/// Converts a slice into an nalgebra column vector.
pub fn to_dvector(x: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |i, j| {
            let t = (i * 7 + j * 3) as f64;
            C64::new((t * 0.37).sin(), (t * 0.11).cos()) + if i == j { C64::new(3.0, 0.0) } else { CZERO }
        })
    }

    #[test]
    fn lu_solves_and_adjoint_solves() {
        let m = sample(9);
        let shift = C64::new(0.3, -0.2);
        let lu = Lu::factor_shifted(&m, shift).unwrap();
        let a = &m - DMatrix::identity(9, 9) * shift;
        let b: Vec<C64> = (0..9).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
        let mut x = b.clone();
        lu.solve(&mut x);
        let r = &a * to_dvector(&x) - to_dvector(&b);
        assert!(r.norm() < 1e-12);
        let mut y = b.clone();
        lu.solve_adjoint(&mut y);
        let r = a.adjoint() * to_dvector(&y) - to_dvector(&b);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn lu_rejects_zero_matrix() {
        let m = DMatrix::<C64>::zeros(3, 3);
        assert!(Lu::factor_shifted(&m, CZERO).is_err());
    }

    #[test]
    fn general_eigenvalues_of_triangular() {
        let mut m = DMatrix::<C64>::zeros(3, 3);
        m[(0, 0)] = C64::new(1.0, 1.0);
        m[(1, 1)] = C64::new(-2.0, 0.5);
        m[(2, 2)] = C64::new(0.0, -3.0);
        m[(0, 2)] = C64::new(5.0, 0.0);
        let mut ev = general_eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((ev[0] - C64::new(-2.0, 0.5)).norm() < 1e-12);
        assert!((ev[2] - C64::new(1.0, 1.0)).norm() < 1e-12);
    }
}
