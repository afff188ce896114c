//! Free-space dipole-dipole kernel and the collective decay / shift matrices.
//!
//! For a pair displacement `R` the kernel is
//!
//! ```text
//! g(R) = (Γ/2) [ h0(kR) + c(R̂) h2(kR) ],   c = (3 (R̂·d̂)² - 1) / 2      (ΔM = 0)
//!                                          c = -(3 (R̂·d̂)² - 1) / 4     (ΔM = ±1)
//! ```
//!
//! with `Γ_nm = 2 Re g(R_nm)`, `Ω_nm = Im g(R_nm)`, `Γ_nn = Γ` and `Ω_nn = 0`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::AtomCloud;
use crate::special::{bessel_j0, bessel_j2, hankel_h0, hankel_h2};
use crate::{Vec3, GAMMA, K};

/// Transition type; selects the angular coefficient of `h_2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DipoleMode {
    #[default]
    DeltaM0,
    DeltaM1,
}

impl DipoleMode {
    /// Angular coefficient of `h_2` for a direction with `cos θ = R̂·d̂`.
    #[inline]
    pub fn coefficient(self, cos_theta: f64) -> f64 {
        let p2 = 0.5 * (3.0 * cos_theta * cos_theta - 1.0);
        match self {
            DipoleMode::DeltaM0 => p2,
            DipoleMode::DeltaM1 => -0.5 * p2,
        }
    }
}

/// Complex kernel `g(R)`. Errors for a zero (or sub-`1e-8/k`) displacement.
pub fn green_g(r: Vec3, dipole: Vec3, mode: DipoleMode) -> Result<Complex64> {
    let dist = r.norm();
    if dist == 0.0 {
        return Err(Error::SingularKernel("kernel evaluated at zero displacement".into()));
    }
    let s = K * dist;
    let coef = mode.coefficient(r.dot(&dipole) / dist);
    Ok(0.5 * GAMMA * (hankel_h0(s)? + coef * hankel_h2(s)?))
}

/// `Γ(R) = 2 Re g(R)` without error handling, for hot lattice loops.
///
/// Callers guarantee `R ≠ 0`.
#[inline]
pub fn gamma_pair(r: Vec3, dipole: Vec3, mode: DipoleMode) -> f64 {
    let dist = r.norm();
    let s = K * dist;
    GAMMA * (bessel_j0(s) + mode.coefficient(r.dot(&dipole) / dist) * bessel_j2(s))
}

/// Pairwise couplings of a cloud.
#[derive(Clone, Debug)]
pub struct CouplingSet {
    /// Complex kernel; the diagonal holds `Γ/2`.
    pub g: DMatrix<Complex64>,
    pub gamma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

impl CouplingSet {
    /// Couplings from a prescribed decay matrix with no coherent shifts (e.g.
    /// the Dicke limit, every entry equal to Γ).
    pub fn from_gamma(gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(invalid("decay matrix must be square"));
        }
        if gamma != gamma.transpose() {
            return Err(invalid("decay matrix must be symmetric"));
        }
        let g = gamma.map(|x| Complex64::new(0.5 * x, 0.0));
        let omega = DMatrix::zeros(gamma.nrows(), gamma.ncols());
        Ok(Self { g, gamma, omega })
    }

    /// The Dicke model: `Γ_nm = Γ` for every pair.
    pub fn dicke(n: usize) -> Self {
        Self::from_gamma(DMatrix::from_element(n, n, GAMMA)).expect("constant matrix is symmetric")
    }

    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `g^±_nm = ±iΩ_nm + Γ_nm/2`.
    pub fn gpm(&self, n: usize, m: usize, sign: f64) -> Complex64 {
        Complex64::new(0.5 * self.gamma[(n, m)], sign * self.omega[(n, m)])
    }
}

/// Fills the Γ, Ω and g matrices; upper triangle rows are computed in parallel
/// and mirrored, so the result is exactly symmetric and thread-count independent.
pub fn build_coupling(cloud: &AtomCloud) -> Result<CouplingSet> {
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("cannot build couplings for an empty cloud"));
    }
    let pos = cloud.positions();
    let (dipole, mode) = (cloud.dipole(), cloud.mode());
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| green_g(pos[i] - pos[j], dipole, mode)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let mut g = DMatrix::from_element(n, n, Complex64::new(0.5 * GAMMA, 0.0));
    for (i, row) in rows.iter().enumerate() {
        for (off, &val) in row.iter().enumerate() {
            let j = i + 1 + off;
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
    }
    let gamma = g.map(|z| 2.0 * z.re);
    let mut omega = g.map(|z| z.im);
    omega.fill_diagonal(0.0);
    Ok(CouplingSet { g, gamma, omega })
}

/// Which constant multiplies `j_2` in the multilevel tensor kernel.
///
/// `AsPrinted` is `j_0 + (3 R̂_i R̂_i' − 1)/2 · j_2` for every `i, i'`.
/// `Kronecker` is the dyadic form `δ_ii' j_0 + (3 R̂_i R̂_i' − δ_ii')/2 · j_2`,
/// which tends to `δ_ii'` as `R → 0`. They agree on the diagonal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelConvention {
    #[default]
    AsPrinted,
    Kronecker,
}

/// A decay channel to a p-state manifold: partial rate and photon wavenumber.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultilevelChannel {
    pub gamma_f: f64,
    pub k_f_mag: f64,
    pub convention: KernelConvention,
}

impl MultilevelChannel {
    pub fn new(gamma_f: f64, k_f_mag: f64, convention: KernelConvention) -> Result<Self> {
        if !(gamma_f > 0.0 && gamma_f.is_finite()) {
            return Err(invalid(format!("channel decay rate must be positive, got {gamma_f}")));
        }
        if !(k_f_mag > 0.0 && k_f_mag.is_finite()) {
            return Err(invalid(format!("channel wavenumber must be positive, got {k_f_mag}")));
        }
        Ok(Self { gamma_f, k_f_mag, convention })
    }
}

/// Tensor decay kernel `Γ^{f i i'}(R)` for Cartesian axes `i, i' ∈ {0, 1, 2}`.
pub fn multilevel_gamma(r: Vec3, ch: &MultilevelChannel, i: usize, ip: usize) -> Result<f64> {
    if i > 2 || ip > 2 {
        return Err(invalid(format!("axis indices must be 0..=2, got ({i}, {ip})")));
    }
    let dist = r.norm();
    if dist == 0.0 {
        return Err(Error::SingularKernel("multilevel kernel at zero displacement".into()));
    }
    Ok(multilevel_gamma_unchecked(r / dist, ch.k_f_mag * dist, ch, i, ip))
}

pub(crate) fn multilevel_gamma_unchecked(rhat: Vec3, s: f64, ch: &MultilevelChannel, i: usize, ip: usize) -> f64 {
    let delta = match ch.convention {
        KernelConvention::AsPrinted => 1.0,
        KernelConvention::Kronecker => f64::from(u8::from(i == ip)),
    };
    ch.gamma_f * (delta * bessel_j0(s) + 0.5 * (3.0 * rhat[i] * rhat[ip] - delta) * bessel_j2(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{line_lattice, random_cloud};
    use std::f64::consts::PI;

    #[test]
    fn small_separation_gives_dicke_limit() {
        let g = green_g(Vec3::new(0.0, 0.0, 1e-6), Vec3::z(), DipoleMode::DeltaM0).unwrap();
        assert!((2.0 * g.re - GAMMA).abs() < 1e-9);
        let g = green_g(Vec3::new(1e-6, 0.0, 0.0), Vec3::z(), DipoleMode::DeltaM1).unwrap();
        assert!((2.0 * g.re - GAMMA).abs() < 1e-9);
    }

    #[test]
    fn on_axis_half_wavelength() {
        // s = kR = π on the dipole axis: P2(1) = 1.
        let g = green_g(Vec3::new(0.0, 0.0, 0.5), Vec3::z(), DipoleMode::DeltaM0).unwrap();
        let i = Complex64::i();
        let h0 = (i * PI).exp() / (i * PI);
        let h2 = (-3.0 * i / PI.powi(3) - 3.0 / (PI * PI) + i / PI) * (i * PI).exp();
        let expected = 0.5 * (h0 + h2);
        assert!((g - expected).norm() < 1e-14);
    }

    #[test]
    fn magic_angle_kills_h2() {
        let c = 1.0 / 3f64.sqrt();
        let dir = Vec3::new((1.0 - c * c).sqrt(), 0.0, c);
        let r = dir * 0.37;
        let g = green_g(r, Vec3::z(), DipoleMode::DeltaM0).unwrap();
        let expected = 0.5 * hankel_h0(K * 0.37).unwrap();
        assert!((g - expected).norm() < 1e-14);
    }

    #[test]
    fn zero_displacement_is_singular() {
        assert!(matches!(green_g(Vec3::zeros(), Vec3::z(), DipoleMode::DeltaM0), Err(Error::SingularKernel(_))));
    }

    #[test]
    fn reciprocity() {
        let r = Vec3::new(0.3, -0.7, 0.2);
        for mode in [DipoleMode::DeltaM0, DipoleMode::DeltaM1] {
            let a = green_g(r, Vec3::z(), mode).unwrap();
            let b = green_g(-r, Vec3::z(), mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_atom() {
        let c = build_coupling(&line_lattice(1, 1.0).unwrap()).unwrap();
        assert_eq!(c.gamma, DMatrix::from_element(1, 1, GAMMA));
        assert_eq!(c.omega, DMatrix::from_element(1, 1, 0.0));
    }

    #[test]
    fn empty_cloud_rejected() {
        let empty = crate::geometry::thin_cloud(&line_lattice(3, 1.0).unwrap(), 1.0, 0).unwrap();
        assert!(build_coupling(&empty).is_err());
    }

    #[test]
    fn matrices_consistent_with_kernel() {
        let cloud = random_cloud(12, 1.5, 0.05, 4).unwrap();
        let c = build_coupling(&cloud).unwrap();
        assert_eq!(c.gamma, c.gamma.transpose());
        assert_eq!(c.omega, c.omega.transpose());
        let p = cloud.positions();
        for i in 0..p.len() {
            assert_eq!(c.gamma[(i, i)], GAMMA);
            assert_eq!(c.omega[(i, i)], 0.0);
            for j in 0..p.len() {
                if i == j {
                    continue;
                }
                let g = green_g(p[i] - p[j], cloud.dipole(), cloud.mode()).unwrap();
                assert!((2.0 * g.re - c.gamma[(i, j)]).abs() < 1e-14);
                assert!((g.im - c.omega[(i, j)]).abs() < 1e-14);
                assert!(c.gamma[(i, j)].abs() <= GAMMA);
                let gp = c.gpm(i, j, 1.0);
                assert!((gp - c.g[(i, j)]).norm() < 1e-15);
                let gm = c.gpm(i, j, -1.0);
                assert!((gm - c.g[(i, j)].conj()).norm() < 1e-15);
                assert!((gamma_pair(p[i] - p[j], cloud.dipole(), cloud.mode()) - c.gamma[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn close_pair_approaches_dicke() {
        // Small-s expansion: j0 ≈ 1 - s²/6, j2 ≈ s²/15, so on the dipole axis
        // Γ12 ≈ 1 - s²/6 + s²/15 = 1 - s²/10.
        for &d in &[1e-2, 1e-3, 1e-4] {
            let cloud = AtomCloud::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, d)], Vec3::z()).unwrap();
            let c = build_coupling(&cloud).unwrap();
            let s = K * d;
            let expected = 1.0 - s * s / 10.0;
            assert!((c.gamma[(0, 1)] - expected).abs() < s.powi(4));
        }
    }

    #[test]
    fn multilevel_kernel_limits() {
        let tiny = Vec3::new(1e-7, 2e-7, -1e-7);
        let kr = MultilevelChannel::new(0.7, K, KernelConvention::Kronecker).unwrap();
        let ap = MultilevelChannel::new(0.7, K, KernelConvention::AsPrinted).unwrap();
        for i in 0..3 {
            for ip in 0..3 {
                let want = if i == ip { 0.7 } else { 0.0 };
                assert!((multilevel_gamma(tiny, &kr, i, ip).unwrap() - want).abs() < 1e-10);
                assert!((multilevel_gamma(tiny, &ap, i, ip).unwrap() - 0.7).abs() < 1e-10);
            }
        }
        let r = Vec3::new(0.0, 0.0, 0.41);
        let s = K * 0.41;
        let zz = multilevel_gamma(r, &ap, 2, 2).unwrap();
        assert!((zz - 0.7 * (bessel_j0(s) + bessel_j2(s))).abs() < 1e-15);
        assert!(multilevel_gamma(Vec3::zeros(), &ap, 0, 0).is_err());
        assert!(multilevel_gamma(r, &ap, 3, 0).is_err());
        assert!(MultilevelChannel::new(0.0, K, KernelConvention::AsPrinted).is_err());
        assert!(MultilevelChannel::new(1.0, -1.0, KernelConvention::AsPrinted).is_err());
    }
}
