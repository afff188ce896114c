//! Spherical Bessel and outgoing spherical Hankel functions of order 0 and 2.
//!
//! Only the two orders needed by the dipole kernel are provided. The Hankel
//! functions use their closed forms, `h_ℓ = j_ℓ + i y_ℓ`; `j_2` switches to its
//! power series below `s = 1` where the closed form cancels catastrophically.
//! Relative precision of `h_2` itself degrades as `1/s³` dominates for
//! `s < 1e-4`; arguments below [`MIN_HANKEL_ARG`] are rejected.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Smallest argument accepted by the Hankel functions.
pub const MIN_HANKEL_ARG: f64 = 1e-8;

const SERIES_CUTOFF: f64 = 1.0;

pub fn bessel_j0(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        let s2 = s * s;
        1.0 - s2 / 6.0 * (1.0 - s2 / 20.0 * (1.0 - s2 / 42.0))
    } else {
        s.sin() / s
    }
}

pub fn bessel_j2(s: f64) -> f64 {
    if s.abs() < SERIES_CUTOFF {
        j2_series(s)
    } else {
        j2_closed(s)
    }
}

/// `Σ_k (-1)^k s^(2k+2) / (2^k k! (2k+5)!!)`
fn j2_series(s: f64) -> f64 {
    let s2 = s * s;
    let mut term = s2 / 15.0;
    let mut sum = term;
    for k in 1..12 {
        let kf = k as f64;
        term *= -s2 / (2.0 * kf * (2.0 * kf + 5.0));
        sum += term;
    }
    sum
}

fn j2_closed(s: f64) -> f64 {
    let (sin, cos) = s.sin_cos();
    (3.0 / (s * s * s) - 1.0 / s) * sin - 3.0 * cos / (s * s)
}

pub fn bessel_y0(s: f64) -> f64 {
    -s.cos() / s
}

pub fn bessel_y2(s: f64) -> f64 {
    let (sin, cos) = s.sin_cos();
    -3.0 * cos / (s * s * s) - 3.0 * sin / (s * s) + cos / s
}

fn check_hankel_arg(s: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Domain(format!("Hankel argument must be positive, got {s}")));
    }
    if s < MIN_HANKEL_ARG {
        return Err(Error::SingularKernel(format!(
            "Hankel argument {s:e} below the supported minimum {MIN_HANKEL_ARG:e}"
        )));
    }
    Ok(())
}

/// `h_0^(1)(s) = e^{is} / (is)`.
pub fn hankel_h0(s: f64) -> Result<Complex64> {
    check_hankel_arg(s)?;
    Ok(Complex64::new(bessel_j0(s), bessel_y0(s)))
}

/// `h_2^(1)(s) = (-3i/s³ - 3/s² + i/s) e^{is}`.
pub fn hankel_h2(s: f64) -> Result<Complex64> {
    check_hankel_arg(s)?;
    Ok(Complex64::new(bessel_j2(s), bessel_y2(s)))
}
