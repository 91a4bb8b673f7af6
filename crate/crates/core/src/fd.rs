//! Richardson-extrapolated central finite differences.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::par::Exec;

/// Value, gradient and Hessian of a scalar function at one point.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// Central differences with steps `h` and `h/2`, combined as `(4 D(h/2) − D(h))/3`.
///
/// All stencil points are evaluated through `exec` and combined in a fixed
/// order, so the result does not depend on scheduling.
pub fn jet<F>(f: F, x: &[f64], h: f64, exec: Exec) -> Result<Jet>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let d = x.len();
    let mut pts: Vec<Vec<f64>> = vec![x.to_vec()];
    let steps = [h, 0.5 * h];
    for &s in &steps {
        for p in 0..d {
            for sign in [1.0, -1.0] {
                let mut y = x.to_vec();
                y[p] += sign * s;
                pts.push(y);
            }
        }
        for p in 0..d {
            for q in (p + 1)..d {
                for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut y = x.to_vec();
                    y[p] += a * s;
                    y[q] += b * s;
                    pts.push(y);
                }
            }
        }
    }
    let vals = exec.try_map(pts.len(), |i| f(&pts[i]))?;
    let f0 = vals[0];
    let per_step = 2 * d + 2 * d * (d.saturating_sub(1));
    let mut grads = Vec::new();
    let mut hessians = Vec::new();
    for (si, &s) in steps.iter().enumerate() {
        let base = 1 + si * per_step;
        let mut g = vec![0.0; d];
        let mut hm = DMatrix::zeros(d, d);
        for p in 0..d {
            let fp = vals[base + 2 * p];
            let fm = vals[base + 2 * p + 1];
            g[p] = (fp - fm) / (2.0 * s);
            hm[(p, p)] = (fp - 2.0 * f0 + fm) / (s * s);
        }
        let mut off = base + 2 * d;
        for p in 0..d {
            for q in (p + 1)..d {
                let c = (vals[off] - vals[off + 1] - vals[off + 2] + vals[off + 3]) / (4.0 * s * s);
                hm[(p, q)] = c;
                hm[(q, p)] = c;
                off += 4;
            }
        }
        grads.push(g);
        hessians.push(hm);
    }
    let grad = (0..d).map(|p| (4.0 * grads[1][p] - grads[0][p]) / 3.0).collect();
    let hess = (&hessians[1] * 4.0 - &hessians[0]) / 3.0;
    Ok(Jet { value: f0, grad, hess })
}

/// Richardson-extrapolated central first derivatives only.
pub fn gradient<F>(f: F, x: &[f64], h: f64, exec: Exec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let d = x.len();
    let mut pts = Vec::with_capacity(4 * d);
    for s in [h, 0.5 * h] {
        for p in 0..d {
            for sign in [1.0, -1.0] {
                let mut y = x.to_vec();
                y[p] += sign * s;
                pts.push(y);
            }
        }
    }
    let vals = exec.try_map(pts.len(), |i| f(&pts[i]))?;
    Ok((0..d)
        .map(|p| {
            let g1 = (vals[2 * p] - vals[2 * p + 1]) / (2.0 * h);
            let g2 = (vals[2 * d + 2 * p] - vals[2 * d + 2 * p + 1]) / h;
            (4.0 * g2 - g1) / 3.0
        })
        .collect())
}

/// Hessian by Richardson central differences of an exact gradient `g`,
/// symmetrized. `g` returns the value and the gradient.
pub fn jet_from_gradient<G>(g: G, x: &[f64], h: f64, exec: Exec) -> Result<Jet>
where
    G: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync + Send,
{
    let d = x.len();
    let mut pts: Vec<Vec<f64>> = vec![x.to_vec()];
    for s in [h, 0.5 * h] {
        for p in 0..d {
            for sign in [1.0, -1.0] {
                let mut y = x.to_vec();
                y[p] += sign * s;
                pts.push(y);
            }
        }
    }
    let vals = exec.try_map(pts.len(), |i| g(&pts[i]))?;
    let (value, grad) = vals[0].clone();
    let mut hess = DMatrix::zeros(d, d);
    for p in 0..d {
        for q in 0..d {
            let c1 = (vals[1 + 2 * p].1[q] - vals[2 + 2 * p].1[q]) / (2.0 * h);
            let c2 = (vals[1 + 2 * d + 2 * p].1[q] - vals[2 + 2 * d + 2 * p].1[q]) / h;
            hess[(p, q)] = (4.0 * c2 - c1) / 3.0;
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    Ok(Jet { value, grad, hess })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quartic() {
        let f = |x: &[f64]| Ok(x[0].powi(4) + 3.0 * x[0] * x[1] - x[1] * x[1] + x[0] * x[1].powi(3));
        let j = jet(f, &[0.3, -0.7], 1e-2, Exec::Sequential).unwrap();
        let (a, b): (f64, f64) = (0.3, -0.7);
        assert!((j.grad[0] - (4.0 * a.powi(3) + 3.0 * b + b.powi(3))).abs() < 1e-9);
        assert!((j.grad[1] - (3.0 * a - 2.0 * b + 3.0 * a * b * b)).abs() < 1e-9);
        assert!((j.hess[(0, 0)] - 12.0 * a * a).abs() < 1e-8);
        assert!((j.hess[(0, 1)] - (3.0 + 3.0 * b * b)).abs() < 1e-8);
        assert!((j.hess[(1, 1)] - (-2.0 + 6.0 * a * b)).abs() < 1e-8);
        let g = gradient(f, &[0.3, -0.7], 1e-2, Exec::Sequential).unwrap();
        assert!((g[0] - j.grad[0]).abs() < 1e-12);
        let exact = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            Ok((f(x)?, vec![4.0 * a.powi(3) + 3.0 * b + b.powi(3), 3.0 * a - 2.0 * b + 3.0 * a * b * b]))
        };
        let jg = jet_from_gradient(exact, &[0.3, -0.7], 1e-2, Exec::Sequential).unwrap();
        assert!((jg.hess[(0, 1)] - (3.0 + 3.0 * b * b)).abs() < 1e-10);
        assert!((jg.hess[(1, 1)] - (-2.0 + 6.0 * a * b)).abs() < 1e-10);
    }
}
