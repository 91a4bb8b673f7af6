//! Adaptive Gauss–Kronrod quadrature for complex integrands and tensor
//! Chebyshev interpolation on rectangles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, CZERO};
use crate::par::pairwise_sum;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
pub fn gk15<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += s * WGK[j];
        if j % 2 == 1 {
            g += s * WG[j / 2];
        }
    }
    (k * h, ((k - g) * h).norm())
}

/// Tolerances for [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self { abs: 1e-14, rel: 1e-10, max_intervals: 4000 }
    }
}

/// Globally adaptive integration over `[a, b]` split first at `breaks`.
///
/// The interval with the largest error estimate is bisected until the
/// total estimate meets the tolerance. Returns the integral and the error
/// estimate; the final sum runs over intervals in left-to-right order.
pub fn integrate<F: FnMut(f64) -> C64>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: QuadTol) -> Result<(C64, f64)> {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    let mut ivs: Vec<(f64, f64, C64, f64)> = pts
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let total: C64 = ivs.iter().map(|iv| iv.2).sum();
        let err: f64 = ivs.iter().map(|iv| iv.3).sum();
        if err <= tol.abs.max(tol.rel * total.norm()) {
            break;
        }
        if ivs.len() >= tol.max_intervals {
            return Err(Error::NoConvergence {
                stage: "adaptive quadrature".into(),
                detail: format!("error {err:.3e} on |I| = {:.3e} after {} intervals", total.norm(), ivs.len()),
            });
        }
        let (worst, _) = ivs
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, iv)| if iv.3 > acc.1 { (i, iv.3) } else { acc });
        let (l, r, ..) = ivs[worst];
        let m = 0.5 * (l + r);
        if m <= l || m >= r {
            return Err(Error::NoConvergence { stage: "adaptive quadrature".into(), detail: "interval underflow".into() });
        }
        let (v1, e1) = gk15(&mut f, l, m);
        let (v2, e2) = gk15(&mut f, m, r);
        ivs[worst] = (l, m, v1, e1);
        ivs.insert(worst + 1, (m, r, v2, e2));
    }
    let vals: Vec<C64> = ivs.iter().map(|iv| iv.2).collect();
    Ok((pairwise_sum(&vals), ivs.iter().map(|iv| iv.3).sum()))
}

/// Chebyshev points of the first kind on `[−1, 1]`, largest first.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|j| (PI * (j as f64 + 0.5) / n as f64).cos()).collect()
}

/// Tensor Chebyshev interpolant of a complex function on
/// `[−ρ, ρ] × [−ρ, ρ]`.
#[derive(Clone, Debug)]
pub struct Chebyshev2 {
    pub n: usize,
    pub radius: f64,
    /// Coefficients `c[i][j]` of `T_i(x/ρ) T_j(y/ρ)`, row-major.
    coeffs: Vec<C64>,
}

impl Chebyshev2 {
    /// Interpolates from values `vals[i * n + j] = f(ρ x_i, ρ x_j)` at
    /// [`chebyshev_nodes`].
    pub fn from_values(n: usize, radius: f64, vals: &[C64]) -> Self {
        assert_eq!(vals.len(), n * n);
        let t: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (PI * i as f64 * (j as f64 + 0.5) / n as f64).cos()).collect())
            .collect();
        let scale = |i: usize| if i == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
        let mut tmp = vec![CZERO; n * n];
        for a in 0..n {
            for i in 0..n {
                let mut acc = CZERO;
                for j in 0..n {
                    acc += vals[j * n + a] * t[i][j];
                }
                tmp[i * n + a] = acc * scale(i);
            }
        }
        let mut coeffs = vec![CZERO; n * n];
        for i in 0..n {
            for b in 0..n {
                let mut acc = CZERO;
                for j in 0..n {
                    acc += tmp[i * n + j] * t[b][j];
                }
                coeffs[i * n + b] = acc * scale(b);
            }
        }
        Self { n, radius, coeffs }
    }

    /// Node coordinates `ρ x_j`.
    pub fn nodes(n: usize, radius: f64) -> Vec<f64> {
        chebyshev_nodes(n).into_iter().map(|x| radius * x).collect()
    }

    pub fn eval(&self, x: f64, y: f64) -> C64 {
        let n = self.n;
        let ty = chebyshev_values(n, y / self.radius);
        let tx = chebyshev_values(n, x / self.radius);
        let mut acc = CZERO;
        for i in 0..n {
            let mut row = CZERO;
            for j in 0..n {
                row += self.coeffs[i * n + j] * ty[j];
            }
            acc += row * tx[i];
        }
        acc
    }

    /// Chebyshev coefficients in `x` of the restriction to fixed `y`.
    pub fn slice_at_y(&self, y: f64) -> Vec<C64> {
        let n = self.n;
        let ty = chebyshev_values(n, y / self.radius);
        (0..n).map(|i| (0..n).fold(CZERO, |acc, j| acc + self.coeffs[i * n + j] * ty[j])).collect()
    }

    /// Magnitude of the trailing coefficients relative to the largest one.
    pub fn tail_ratio(&self) -> f64 {
        let n = self.n;
        let max = self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let mut tail = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i + 2 >= n || j + 2 >= n {
                    tail = tail.max(self.coeffs[i * n + j].norm());
                }
            }
        }
        tail / max.max(1e-300)
    }
}

/// Clenshaw evaluation of `Σ c_i T_i(t)`.
pub fn clenshaw(coeffs: &[C64], t: f64) -> C64 {
    let mut b1 = CZERO;
    let mut b2 = CZERO;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + b1 * (2.0 * t) - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or(CZERO) + b1 * t - b2
}

fn chebyshev_values(n: usize, x: f64) -> Vec<f64> {
    let mut t = vec![0.0; n];
    if n > 0 {
        t[0] = 1.0;
    }
    if n > 1 {
        t[1] = x;
    }
    for k in 2..n {
        t[k] = 2.0 * x * t[k - 1] - t[k - 2];
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_oscillatory_exponential() {
        let r = 30.0;
        let (v, _) = integrate(|x| C64::new(0.0, r * x).exp(), -1.0, 2.0, &[0.0], QuadTol::default()).unwrap();
        let exact = (C64::new(0.0, 2.0 * r).exp() - C64::new(0.0, -r).exp()) / C64::new(0.0, r);
        assert!((v - exact).norm() < 1e-12);
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let n = 24;
        let rho = 0.8;
        let xs = Chebyshev2::nodes(n, rho);
        let f = |x: f64, y: f64| C64::new(x * y, 0.3).exp() / C64::new(2.0 + x, y);
        let vals: Vec<C64> = xs.iter().flat_map(|&x| xs.iter().map(move |&y| f(x, y))).collect();
        let c = Chebyshev2::from_values(n, rho, &vals);
        for (x, y) in [(0.1, -0.3), (0.77, 0.5), (-0.8, 0.8)] {
            assert!((c.eval(x, y) - f(x, y)).norm() < 1e-12);
        }
        assert!(c.tail_ratio() < 1e-10);
        let slice = c.slice_at_y(0.5);
        assert!((clenshaw(&slice, 0.77 / rho) - f(0.77, 0.5)).norm() < 1e-12);
    }
}
