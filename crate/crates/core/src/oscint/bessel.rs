//! Bessel functions of order 0 and 1 and the Hankel function H0^(1).
//!
//! Power series below `SERIES_CUTOFF`, Hankel asymptotic expansion above.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

const SERIES_CUTOFF: f64 = 12.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn j_series(x: f64, order: u32) -> f64 {
    let q = -0.25 * x * x;
    let mut term = if order == 0 { 1.0 } else { 0.5 * x };
    let mut sum = term;
    let nu = order as f64;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + nu));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn y0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        harmonic += 1.0 / kf;
        let contrib = harmonic * term;
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) && k > 3 {
            break;
        }
    }
    2.0 / PI * ((0.5 * x).ln() + EULER_GAMMA) * j_series(x, 0) - 2.0 / PI * sum
}

fn y1_series(x: f64) -> f64 {
    // digamma(k+1) + digamma(k+2) = 2(H_k - gamma) + 1/(k+1)
    let q = -0.25 * x * x;
    let mut term = 0.5 * x;
    let mut harmonic = 0.0;
    let mut sum = term * (-2.0 * EULER_GAMMA + 1.0);
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        let contrib = term * (2.0 * (harmonic - EULER_GAMMA) + 1.0 / (kf + 1.0));
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) && k > 3 {
            break;
        }
    }
    -2.0 / (PI * x) + 2.0 / PI * (0.5 * x).ln() * j_series(x, 1) - sum / PI
}

/// Returns (J_nu, Y_nu) from the Hankel expansion, optimally truncated.
fn asymptotic(x: f64, order: u32) -> (f64, f64) {
    let mu = 4.0 * (order as f64).powi(2);
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..120 {
        let kf = k as f64;
        a *= (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if a.abs() >= last || a.abs() < 1e-18 {
            break;
        }
        last = a.abs();
        // a_k alternates between Q (odd k) and P (even k) with sign (-1)^{floor(k/2)}
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * a;
        } else {
            p += sign * a;
        }
    }
    let chi = x - (0.5 * order as f64 + 0.25) * PI;
    let amp = (2.0 / (PI * x)).sqrt();
    let (s, c) = chi.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// J0(x) for x ≥ 0.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= SERIES_CUTOFF {
        j_series(x, 0)
    } else {
        asymptotic(x, 0).0
    }
}

/// J1(x) for x ≥ 0.
pub fn bessel_j1(x: f64) -> f64 {
    if x < 0.0 {
        return -bessel_j1(-x);
    }
    if x <= SERIES_CUTOFF {
        j_series(x, 1)
    } else {
        asymptotic(x, 1).0
    }
}

/// Y0(x) for x > 0.
pub fn bessel_y0(x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::InvalidParameter(format!("Y0 requires x > 0, got {x}")));
    }
    Ok(if x <= SERIES_CUTOFF { y0_series(x) } else { asymptotic(x, 0).1 })
}

/// Y1(x) for x > 0.
pub fn bessel_y1(x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::InvalidParameter(format!("Y1 requires x > 0, got {x}")));
    }
    Ok(if x <= SERIES_CUTOFF { y1_series(x) } else { asymptotic(x, 1).1 })
}

/// Hankel function of the first kind, order 0. Logarithmic singularity at 0.
pub fn hankel1_h0(x: f64) -> Result<Complex64> {
    if x <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "H0^(1) is singular at x = {x}"
        )));
    }
    Ok(Complex64::new(bessel_j0(x), bessel_y0(x)?))
}

/// Leading term of H0^(1) for large argument; used by tests and diagnostics.
pub fn hankel1_h0_leading(x: f64) -> Complex64 {
    (2.0 / (PI * x)).sqrt() * Complex64::from_polar(1.0, x - FRAC_PI_4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_known_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-10);
        // continuity across the series/asymptotic switch
        for x in [SERIES_CUTOFF - 0.5, SERIES_CUTOFF] {
            assert!((j_series(x, 0) - asymptotic(x, 0).0).abs() < 1e-10);
            assert!((y0_series(x) - asymptotic(x, 0).1).abs() < 1e-10);
        }
    }

    #[test]
    fn wronskian_cross_identity() {
        for &x in &[0.3, 1.0, 4.7, 11.9, 12.1, 20.0, 37.5, 50.0] {
            let w = bessel_j1(x) * bessel_y0(x).unwrap() - bessel_j0(x) * bessel_y1(x).unwrap();
            assert!((w - 2.0 / (PI * x)).abs() < 1e-10, "x={x} w={w}");
        }
    }

    #[test]
    fn hankel_rejects_origin() {
        assert!(hankel1_h0(0.0).is_err());
    }
}
