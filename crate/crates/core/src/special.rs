//! Special functions: `K0`, the complex error function near the real axis,
//! and the spectral window built from it.

use std::f64::consts::PI;

use crate::linalg::C64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel function `K0(x)` for `x > 0`.
///
/// Power series below `x = 2`; above, the trapezoid rule on
/// `∫_0^∞ exp(−x cosh t) dt`, which converges geometrically because the
/// integrand is analytic in a strip.
pub fn bessel_k0(x: f64) -> f64 {
    assert!(x > 0.0, "K0 needs x > 0");
    if x < 2.0 {
        let y = 0.25 * x * x;
        let mut term = 1.0;
        let mut harmonic = 0.0;
        let mut i0 = 1.0;
        let mut tail = 0.0;
        for k in 1..40 {
            let kf = k as f64;
            term *= y / (kf * kf);
            harmonic += 1.0 / kf;
            i0 += term;
            tail += term * harmonic;
            if term < 1e-18 {
                break;
            }
        }
        -((0.5 * x).ln() + EULER_GAMMA) * i0 + tail
    } else {
        let h = 0.125;
        let mut sum = 0.5;
        let mut j = 1;
        loop {
            let t = h * j as f64;
            let v = (-x * (t.cosh() - 1.0)).exp();
            sum += v;
            if v < 1e-18 {
                break;
            }
            j += 1;
        }
        h * sum * (-x).exp()
    }
}

/// Leading terms of the large-argument expansion of `K0`.
pub fn bessel_k0_asymptotic(x: f64, terms: usize) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..terms {
        let a = (2 * k - 1) as f64;
        term *= -a * a / (k as f64 * 8.0 * x);
        sum += term;
    }
    (PI / (2.0 * x)).sqrt() * (-x).exp() * sum
}

/// `erf(u + iv)` by the Taylor series in `iv` about the real point `u`,
/// using `d^n/du^n erf(u) = (2/√π)(−1)^{n−1} H_{n−1}(u) e^{−u²}`.
/// Intended for `|v| ≲ 1`.
pub fn erf_complex(z: C64) -> C64 {
    let (u, v) = (z.re, z.im);
    let base = libm::erf(u);
    if v == 0.0 {
        return C64::new(base, 0.0);
    }
    let g = 2.0 / PI.sqrt() * (-u * u).exp();
    let mut h_prev = 0.0;
    let mut h = 1.0;
    let mut ivn = C64::new(1.0, 0.0);
    let mut fact = 1.0;
    let mut acc = C64::new(base, 0.0);
    for n in 1..80 {
        ivn *= C64::new(0.0, v);
        fact *= n as f64;
        let sign = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
        let term = ivn * (sign * g * h / fact);
        acc += term;
        if term.norm() < 1e-18 * (1.0 + acc.norm()) && n > 2 {
            break;
        }
        let k = (n - 1) as f64;
        let h_next = 2.0 * u * h - 2.0 * k * h_prev;
        h_prev = h;
        h = h_next;
    }
    acc
}

/// Smooth even window `½[erf((½ − t)/w) + erf((½ + t)/w)]`, close to one
/// for `|t| < ½` and entire in `t`.
pub fn erf_window(t: C64, width: f64) -> C64 {
    let half = C64::new(0.5, 0.0);
    (erf_complex((half - t) / width) + erf_complex((half + t) / width)) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k0_reference_values() {
        let cases = [(0.1, 2.427_069_024_702_017), (1.0, 0.421_024_438_240_708_3), (2.0, 0.113_893_872_749_533_4), (10.0, 1.778_006_231_616_765e-5)];
        for (x, k) in cases {
            assert!((bessel_k0(x) / k - 1.0).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn k0_branches_agree_at_switch() {
        let a = bessel_k0(2.0 - 1e-12);
        let b = bessel_k0(2.0);
        assert!((a / b - 1.0).abs() < 1e-11);
    }

    #[test]
    fn complex_erf_matches_real_and_symmetry() {
        let z = C64::new(0.3, 0.0);
        assert_eq!(erf_complex(z).re, libm::erf(0.3));
        let z = C64::new(0.7, 0.4);
        let w = erf_complex(z);
        assert!((erf_complex(z.conj()) - w.conj()).norm() < 1e-15);
        assert!((erf_complex(-z) + w).norm() < 1e-15);
        assert!((w - C64::new(0.759_532_853_783_577_5, 0.276_322_770_104_208_5)).norm() < 1e-14);
    }
}
