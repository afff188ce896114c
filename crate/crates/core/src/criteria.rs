//! Early-time expansion of the photon emission rate.
//!
//! Everything here evaluates closed-form expressions for `γ(0)`, `γ̇(0)` and
//! `γ̈(0)` in an uncorrelated product initial state
//!
//! ```text
//! |ψ⟩ = ⊗_n [ cos(α/2) |g_n⟩ + e^{i k_i·R_n} sin(α/2) |e_n⟩ ]
//! ```
//!
//! for the total rate and for the rate into a detection wavevector `k_f`.
//! Phase matrices use `φ_mn = k_f·(R_m − R_n)` and `η_mn = k_i·(R_m − R_n)`.
//!
//! The partially inverted expressions contain a sum over a third atom `l`.
//! It factorizes through the row sums `A_n = Σ_{l≠n} g_nl e^{i k_i·R_l}`, so
//! the default evaluation is O(N²); the literal triple sum is kept as
//! [`SumMethod::TripleSum`] for cross-checking and is subject to an atom cap.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{multilevel_gamma_unchecked, CouplingSet, MultilevelChannel};
use crate::error::{invalid, Error, Result};
use crate::geometry::AtomCloud;
use crate::{Vec3, GAMMA, K};

/// Relative size of the imaginary residue tolerated in complex accumulations.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Default atom cap for the literal O(N³) triple sum.
pub const DEFAULT_TRIPLE_SUM_CAP: usize = 400;

/// Initial product state: inversion angle and the phase-imprinting wavevector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub alpha: f64,
    pub k_i: Vec3,
}

impl DriveSpec {
    /// `k_i` is rescaled to `|k_i| = k`; only its direction matters.
    pub fn new(alpha: f64, k_i_direction: Vec3) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&alpha) {
            return Err(invalid(format!("inversion angle must lie in [0, π], got {alpha}")));
        }
        Ok(Self { alpha, k_i: wavevector(k_i_direction)? })
    }

    /// Fully inverted, drive along `ẑ`.
    pub fn inverted() -> Self {
        Self { alpha: std::f64::consts::PI, k_i: Vec3::z() * K }
    }

    /// Drive giving each atom the excited probability `fraction = sin²(α/2)`.
    pub fn from_excited_fraction(fraction: f64, k_i_direction: Vec3) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(invalid(format!("excited fraction must lie in [0, 1], got {fraction}")));
        }
        Self::new(2.0 * fraction.sqrt().asin(), k_i_direction)
    }

    pub fn excited_fraction(&self) -> f64 {
        (0.5 * self.alpha).sin().powi(2)
    }
}

/// Scales a direction to a wavevector of magnitude `k = 2π`.
pub fn wavevector(direction: Vec3) -> Result<Vec3> {
    let norm = direction.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(invalid("wavevector direction must be a non-zero finite vector"));
    }
    Ok(direction * (K / norm))
}

/// `k_f = k (x̂ cos φ + ŷ sin φ)`, the in-plane detection direction used in
/// all region maps.
pub fn in_plane_wavevector(phi: f64) -> Vec3 {
    Vec3::new(phi.cos(), phi.sin(), 0.0) * K
}

/// `k_f` from polar angle `theta` (from `ẑ`) and azimuth `phi`.
pub fn spherical_wavevector(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * K
}

/// Early-time rate coefficients for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeResult {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    pub k_i: Option<Vec3>,
    pub k_f: Option<Vec3>,
    pub gamma0: f64,
    pub gdot0: f64,
    pub gddot0: Option<f64>,
    /// Contribution of independent-atom decay to `gdot0`.
    pub single_atom_term: f64,
    /// Contribution of pair couplings; `gdot0 = single_atom_term + pair_term`.
    pub pair_term: f64,
    pub superradiant: bool,
    /// `k_f` is parallel to the dipole, where the directional rate is not meaningful.
    pub dipole_parallel: bool,
}

impl SlopeResult {
    fn new(n: usize, gamma0: f64, single: f64, pair: f64) -> Self {
        let gdot0 = single + pair;
        Self {
            n,
            alpha: std::f64::consts::PI,
            k_i: None,
            k_f: None,
            gamma0,
            gdot0,
            gddot0: None,
            single_atom_term: single,
            pair_term: pair,
            superradiant: gdot0 > 0.0,
            dipole_parallel: false,
        }
    }

    /// `γ̇(0) / (N Γ²)`, the slope per atom.
    pub fn scaled(&self) -> f64 {
        self.gdot0 / (self.n as f64 * GAMMA * GAMMA)
    }
}

fn require_nonempty(c: &CouplingSet) -> Result<usize> {
    match c.len() {
        0 => Err(invalid("need at least one atom")),
        n => Ok(n),
    }
}

fn require_match(c: &CouplingSet, cloud: &AtomCloud) -> Result<usize> {
    let n = require_nonempty(c)?;
    if cloud.len() != n {
        return Err(invalid(format!("coupling set has {n} atoms but cloud has {}", cloud.len())));
    }
    Ok(n)
}

/// Sums row contributions computed in parallel, in row order.
fn ordered_sum<F>(n: usize, row: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let parts: Vec<f64> = (0..n).into_par_iter().map(row).collect();
    parts.iter().sum()
}

fn ordered_sum_c<F>(n: usize, row: F) -> (Complex64, f64)
where
    F: Fn(usize) -> (Complex64, f64) + Sync + Send,
{
    let parts: Vec<(Complex64, f64)> = (0..n).into_par_iter().map(row).collect();
    parts.iter().fold((Complex64::new(0.0, 0.0), 0.0), |(z, s), (pz, ps)| (z + pz, s + ps))
}

/// `Tr[Γ Γ] = Σ_nm Γ_nm²`, element-wise (no matrix product).
pub fn trace_gamma_squared(c: &CouplingSet) -> f64 {
    let n = c.len();
    ordered_sum(n, |i| c.gamma.row(i).iter().map(|x| x * x).sum())
}

fn dipole_parallel(k_f: &Vec3, cloud: &AtomCloud) -> bool {
    k_f.normalize().cross(&cloud.dipole()).norm() < 1e-12
}

/// Fully inverted, total rate: `γ̇(0) = −2NΓ² + Tr[Γ Γ]`.
pub fn gdot_total_inverted(c: &CouplingSet) -> Result<SlopeResult> {
    let n = require_nonempty(c)?;
    let nf = n as f64;
    let off_diag = trace_gamma_squared(c) - nf * GAMMA * GAMMA;
    Ok(SlopeResult::new(n, nf * GAMMA, -nf * GAMMA * GAMMA, off_diag))
}

/// `e^{i k·R_n}` for every atom.
fn phase_factors(cloud: &AtomCloud, k: &Vec3) -> Vec<Complex64> {
    cloud.positions().iter().map(|r| Complex64::from_polar(1.0, k.dot(r))).collect()
}

/// Fully inverted, rate into `k_f`: `γ̇(0,k_f) = −2NΓ² + Γ Σ_nm Γ_mn cos φ_nm`.
pub fn gdot_directional_inverted(c: &CouplingSet, cloud: &AtomCloud, k_f: Vec3) -> Result<SlopeResult> {
    let n = require_match(c, cloud)?;
    let k_f = wavevector(k_f)?;
    let pos = cloud.positions();
    let pair = GAMMA
        * ordered_sum(n, |m| {
            (0..n).filter(|&j| j != m).map(|j| c.gamma[(m, j)] * k_f.dot(&(pos[j] - pos[m])).cos()).sum()
        });
    let nf = n as f64;
    let mut out = SlopeResult::new(n, nf * GAMMA, -nf * GAMMA * GAMMA, pair);
    out.k_f = Some(k_f);
    out.dipole_parallel = dipole_parallel(&k_f, cloud);
    Ok(out)
}

/// Which reading of the partially inverted expressions to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartialVariant {
    /// Reading that agrees with direct master-equation derivatives:
    /// third-atom term weighted by `−c s²/4`, first directional term in `cos φ_nm`,
    /// no extra `e^{iη_mn}` phase on the directional third-atom term.
    #[default]
    Verified,
    /// The expressions exactly as typeset: third-atom term `+c s²/2` (total),
    /// `cos η_nm` first directional term and an extra `e^{iη_mn}` factor.
    AsPrinted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SumMethod {
    /// O(N²) evaluation through factorized third-atom row sums.
    #[default]
    Factorized,
    /// Literal O(N³) triple sum.
    TripleSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialOptions {
    pub variant: PartialVariant,
    pub method: SumMethod,
    /// Largest N accepted by [`SumMethod::TripleSum`].
    pub triple_sum_cap: usize,
}

impl Default for PartialOptions {
    fn default() -> Self {
        Self {
            variant: PartialVariant::Verified,
            method: SumMethod::Factorized,
            triple_sum_cap: DEFAULT_TRIPLE_SUM_CAP,
        }
    }
}

/// Precomputed ingredients shared by the partial-inversion evaluators.
struct PartialTerms<'a> {
    c: &'a CouplingSet,
    n: usize,
    cos_a: f64,
    sin_a: f64,
    /// `e^{i k_i·R_n}`
    u: Vec<Complex64>,
    /// `A_n = Σ_{l≠n} g_nl u_l`
    row_sums: Vec<Complex64>,
}

impl<'a> PartialTerms<'a> {
    fn new(c: &'a CouplingSet, cloud: &AtomCloud, drive: &DriveSpec, opts: &PartialOptions) -> Result<Self> {
        let n = require_match(c, cloud)?;
        if opts.method == SumMethod::TripleSum && n > opts.triple_sum_cap {
            return Err(Error::TooLarge(format!(
                "triple sum over {n} atoms exceeds the cap of {}; raise `triple_sum_cap` or use the factorized method",
                opts.triple_sum_cap
            )));
        }
        let u = phase_factors(cloud, &drive.k_i);
        let row_sums = (0..n).map(|i| (0..n).filter(|&l| l != i).map(|l| c.g[(i, l)] * u[l]).sum()).collect();
        Ok(Self { c, n, cos_a: drive.alpha.cos(), sin_a: drive.alpha.sin(), u, row_sums })
    }

    /// `Σ_{l≠n,m} (g_nl e^{iη_lm} + g*_ml e^{−iη_ln})`.
    fn third_atom(&self, n: usize, m: usize, method: SumMethod) -> Complex64 {
        let (g, u) = (&self.c.g, &self.u);
        match method {
            SumMethod::Factorized => {
                u[m].conj() * (self.row_sums[n] - g[(n, m)] * u[m])
                    + u[n] * (self.row_sums[m].conj() - g[(m, n)].conj() * u[n].conj())
            }
            SumMethod::TripleSum => (0..self.n)
                .filter(|&l| l != n && l != m)
                .map(|l| g[(n, l)] * u[l] * u[m].conj() + g[(m, l)].conj() * u[l].conj() * u[n])
                .sum(),
        }
    }

    /// `cos η_mn`
    fn cos_eta(&self, m: usize, n: usize) -> f64 {
        (self.u[m] * self.u[n].conj()).re
    }

    /// `e^{iη_mn}`
    fn eta_phase(&self, m: usize, n: usize) -> Complex64 {
        self.u[m] * self.u[n].conj()
    }

    fn excited(&self) -> f64 {
        0.5 * (1.0 - self.cos_a)
    }
}

fn check_residue(sum: Complex64, scale: f64, what: &str) -> Result<f64> {
    let bound = IMAG_RESIDUE_TOL * scale.max(sum.re.abs()).max(f64::MIN_POSITIVE);
    if sum.im.abs() > bound {
        return Err(Error::Numerical(format!(
            "{what}: imaginary residue {:e} exceeds {bound:e} (real part {:e})",
            sum.im, sum.re
        )));
    }
    Ok(sum.re)
}

/// Partially inverted, total rate.
pub fn gdot_total_partial(
    c: &CouplingSet,
    cloud: &AtomCloud,
    drive: &DriveSpec,
    opts: &PartialOptions,
) -> Result<SlopeResult> {
    let t = PartialTerms::new(c, cloud, drive, opts)?;
    let (n, cs, sn) = (t.n, t.cos_a, t.sin_a);
    let s2 = sn * sn;
    let third_coef = match opts.variant {
        PartialVariant::Verified => -0.25 * cs * s2,
        PartialVariant::AsPrinted => 0.5 * cs * s2,
    };
    let (sum, scale) = ordered_sum_c(n, |nn| {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for m in (0..n).filter(|&m| m != nn) {
            let gmn = c.gamma[(m, nn)];
            let real = 0.5 * cs * (cs - 1.0) * gmn * gmn - 0.5 * s2 * gmn * GAMMA * t.cos_eta(m, nn);
            let cplx = if third_coef != 0.0 {
                third_coef * gmn * t.third_atom(nn, m, opts.method)
            } else {
                Complex64::new(0.0, 0.0)
            };
            acc += real + cplx;
            scale += real.abs() + cplx.norm();
        }
        (acc, scale)
    });
    let pair = check_residue(sum, scale, "total partial slope")?;
    let nf = n as f64;
    let mut out = SlopeResult::new(n, gamma0_total_partial(&t), -nf * GAMMA * GAMMA * t.excited(), pair);
    out.alpha = drive.alpha;
    out.k_i = Some(drive.k_i);
    Ok(out)
}

/// `γ(0) = NΓ (1−c)/2 + (s²/4) Σ_{m≠n} Γ_mn cos η_nm`.
fn gamma0_total_partial(t: &PartialTerms) -> f64 {
    let n = t.n;
    let coh = ordered_sum(n, |nn| (0..n).filter(|&m| m != nn).map(|m| t.c.gamma[(m, nn)] * t.cos_eta(nn, m)).sum());
    n as f64 * GAMMA * t.excited() + 0.25 * t.sin_a * t.sin_a * coh
}

/// Partially inverted, rate into `k_f`.
pub fn gdot_directional_partial(
    c: &CouplingSet,
    cloud: &AtomCloud,
    drive: &DriveSpec,
    k_f: Vec3,
    opts: &PartialOptions,
) -> Result<SlopeResult> {
    let k_f = wavevector(k_f)?;
    let t = PartialTerms::new(c, cloud, drive, opts)?;
    let (n, cs, sn) = (t.n, t.cos_a, t.sin_a);
    let s2 = sn * sn;
    let v = phase_factors(cloud, &k_f);
    // e^{iφ_mn} = v_m v̄_n
    let phi_phase = |m: usize, nn: usize| v[m] * v[nn].conj();
    let (sum, scale) = ordered_sum_c(n, |nn| {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for m in (0..n).filter(|&m| m != nn) {
            let gmn = c.gamma[(m, nn)];
            let first_phase = match opts.variant {
                PartialVariant::Verified => phi_phase(nn, m).re,
                PartialVariant::AsPrinted => t.cos_eta(nn, m),
            };
            let e_phi_mn = phi_phase(m, nn);
            let e_eta_mn = t.eta_phase(m, nn);
            // cos(φ_mn − η_mn)
            let cos_diff = (e_phi_mn * e_eta_mn.conj()).re;
            let real = 0.5 * cs * (cs - 1.0) * gmn * first_phase
                - 0.25 * s2 * (c.gamma[(nn, m)] * t.cos_eta(m, nn) + GAMMA * cos_diff);
            let cplx = if cs * s2 != 0.0 {
                let phase = match opts.variant {
                    PartialVariant::Verified => e_phi_mn,
                    PartialVariant::AsPrinted => e_phi_mn * e_eta_mn,
                };
                -0.25 * s2 * cs * phase * t.third_atom(nn, m, opts.method)
            } else {
                Complex64::new(0.0, 0.0)
            };
            acc += real + cplx;
            scale += real.abs() + cplx.norm();
        }
        (acc * GAMMA, scale * GAMMA)
    });
    let pair = check_residue(sum, scale, "directional partial slope")?;
    let nf = n as f64;
    // γ(0,k_f) = Γ [N(1−c)/2 + (s²/4) Σ_{m≠n} e^{iφ_mn} e^{−iη_mn}]
    let coh = ordered_sum(n, |nn| {
        (0..n).filter(|&m| m != nn).map(|m| (phi_phase(m, nn) * t.eta_phase(m, nn).conj()).re).sum()
    });
    let gamma0 = GAMMA * (nf * t.excited() + 0.25 * s2 * coh);
    let mut out = SlopeResult::new(n, gamma0, -nf * GAMMA * GAMMA * t.excited(), pair);
    out.alpha = drive.alpha;
    out.k_i = Some(drive.k_i);
    out.k_f = Some(k_f);
    out.dipole_parallel = dipole_parallel(&k_f, cloud);
    Ok(out)
}

/// Both typeset forms of `γ̈(0)` for the fully inverted total rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondDerivativeForms {
    /// `8NΓ³ − 8Γ Tr[ΓΓ] + Tr[ΓΓΓ]`
    pub trace_form: f64,
    /// `NΓ³ − 5Γ Σ_{n≠m} Γ_nm² + Σ_{n,m,l distinct} Γ_nm Γ_ml Γ_ln`
    pub explicit_form: f64,
}

impl SecondDerivativeForms {
    pub fn rel_diff(&self) -> f64 {
        let scale = self.trace_form.abs().max(self.explicit_form.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.trace_form - self.explicit_form).abs() / scale
        }
    }
}

pub fn gddot_total_forms(c: &CouplingSet) -> Result<SecondDerivativeForms> {
    let n = require_nonempty(c)?;
    let nf = n as f64;
    let gm = &c.gamma;
    let tr2 = trace_gamma_squared(c);
    let gm2 = gm * gm;
    let tr3 = gm2.component_mul(gm).sum();
    let trace_form = 8.0 * nf * GAMMA.powi(3) - 8.0 * GAMMA * tr2 + tr3;

    let off2 = tr2 - nf * GAMMA * GAMMA;
    let distinct = ordered_sum(n, |a| {
        let mut acc = 0.0;
        for b in (0..n).filter(|&b| b != a) {
            let gab = gm[(a, b)];
            for l in (0..n).filter(|&l| l != a && l != b) {
                acc += gab * gm[(b, l)] * gm[(l, a)];
            }
        }
        acc
    });
    let explicit_form = nf * GAMMA.powi(3) - 5.0 * GAMMA * off2 + distinct;
    Ok(SecondDerivativeForms { trace_form, explicit_form })
}

/// Fully inverted total rate with `γ̈(0)`; the two typeset forms are evaluated
/// independently and must agree.
pub fn gddot_total_inverted(c: &CouplingSet) -> Result<SlopeResult> {
    let forms = gddot_total_forms(c)?;
    let scale = 8.0 * c.len() as f64 * GAMMA.powi(3) + forms.trace_form.abs();
    if (forms.trace_form - forms.explicit_form).abs() > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "second-derivative forms disagree: {} vs {}",
            forms.trace_form, forms.explicit_form
        )));
    }
    let mut out = gdot_total_inverted(c)?;
    out.gddot0 = Some(forms.trace_form);
    Ok(out)
}

/// Fully inverted rate into `k_f` with `γ̈(0,k_f)`:
///
/// `8NΓ³ − 2Γ Tr[ΓΓ] − 6Γ² Tr[Γ cos φ] + Γ Tr[ΓΓ cos φ] + Γ Tr[sin φ [Γ, Ω]]`
///
/// The phase matrices are built from the detection phase `φ_mn = k_f·(R_m − R_n)`.
pub fn gddot_directional_inverted(c: &CouplingSet, cloud: &AtomCloud, k_f: Vec3) -> Result<SlopeResult> {
    let mut out = gdot_directional_inverted(c, cloud, k_f)?;
    let k_f = out.k_f.expect("directional result carries k_f");
    let n = out.n;
    let pos = cloud.positions();
    let phi = DMatrix::from_fn(n, n, |m, j| k_f.dot(&(pos[m] - pos[j])));
    let cos_phi = phi.map(f64::cos);
    let sin_phi = phi.map(f64::sin);
    let gm = &c.gamma;
    let om = &c.omega;
    // Tr[A B] = Σ_mn A_mn B_nm
    let tr = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.component_mul(&b.transpose()).sum();
    let gm2 = gm * gm;
    let comm = gm * om - om * gm;
    let nf = n as f64;
    let value =
        8.0 * nf * GAMMA.powi(3) - 2.0 * GAMMA * trace_gamma_squared(c) - 6.0 * GAMMA * GAMMA * tr(gm, &cos_phi)
            + GAMMA * tr(&gm2, &cos_phi)
            + GAMMA * tr(&sin_phi, &comm);
    out.gddot0 = Some(value);
    Ok(out)
}

/// Slope of the photon rate into each decay channel of a multilevel atom.
///
/// `γ̇_f(0) = −N Γ_f Γ + Σ_{n≠m} (1/9) Σ_{ii'} (Γ_nm^{f i i'})²` with `Γ = Σ_f Γ_f`.
pub fn gdot_multilevel(cloud: &AtomCloud, channels: &[MultilevelChannel]) -> Result<Vec<SlopeResult>> {
    if channels.is_empty() {
        return Err(invalid("need at least one decay channel"));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("need at least one atom"));
    }
    let pos = cloud.positions();
    if let Some((i, j)) = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).find(|&(i, j)| pos[i] == pos[j]) {
        return Err(Error::SingularKernel(format!("atoms {i} and {j} coincide")));
    }
    let total: f64 = channels.iter().map(|c| c.gamma_f).sum();
    let nf = n as f64;
    Ok(channels
        .iter()
        .map(|ch| {
            let pair = ordered_sum(n, |a| {
                let mut acc = 0.0;
                for b in (0..n).filter(|&b| b != a) {
                    let r = pos[a] - pos[b];
                    let dist = r.norm();
                    let (rhat, s) = (r / dist, ch.k_f_mag * dist);
                    for i in 0..3 {
                        for ip in 0..3 {
                            acc += multilevel_gamma_unchecked(rhat, s, ch, i, ip).powi(2);
                        }
                    }
                }
                acc / 9.0
            });
            SlopeResult::new(n, nf * ch.gamma_f, -nf * ch.gamma_f * total, pair)
        })
        .collect())
}

/// Cross-check of `Tr[ΓΓ]` against the sum of squared eigenvalues of Γ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenCheck {
    pub trace_value: f64,
    pub eigen_sum: f64,
    pub rel_diff: f64,
    /// `γ̇(0)` from the trace route.
    pub gdot_trace: f64,
    /// `γ̇(0)` from the eigenvalue route.
    pub gdot_eigen: f64,
}

pub fn eigen_criterion_check(c: &CouplingSet) -> Result<EigenCheck> {
    let n = require_nonempty(c)?;
    let trace_value = trace_gamma_squared(c);
    let eig = SymmetricEigen::try_new(c.gamma.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let eigen_sum: f64 = eig.eigenvalues.iter().map(|x| x * x).sum();
    if !eigen_sum.is_finite() {
        return Err(Error::Numerical("non-finite eigenvalues".into()));
    }
    let base = 2.0 * n as f64 * GAMMA * GAMMA;
    Ok(EigenCheck {
        trace_value,
        eigen_sum,
        rel_diff: (trace_value - eigen_sum).abs() / trace_value,
        gdot_trace: trace_value - base,
        gdot_eigen: eigen_sum - base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{build_coupling, KernelConvention};
    use crate::geometry::{line_lattice, random_cloud};
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn dicke_first_and_second_derivative() {
        for n in [1usize, 2, 3, 7, 40] {
            let c = CouplingSet::dicke(n);
            let nf = n as f64;
            let r = gddot_total_inverted(&c).unwrap();
            assert_eq!(r.gdot0, nf * (nf - 2.0));
            assert!(rel(r.gddot0.unwrap(), nf * (nf * nf - 8.0 * nf + 8.0)) < 1e-12);
        }
    }

    #[test]
    fn single_atom_values() {
        let cloud = line_lattice(1, 1.0).unwrap();
        let c = build_coupling(&cloud).unwrap();
        assert_eq!(gdot_total_inverted(&c).unwrap().gdot0, -1.0);
        for phi in [0.0, 0.3, 1.9] {
            let r = gddot_directional_inverted(&c, &cloud, in_plane_wavevector(phi)).unwrap();
            assert_eq!(r.gdot0, -1.0);
            assert_eq!(r.gddot0, Some(1.0));
        }
        let forms = gddot_total_forms(&c).unwrap();
        assert_eq!(forms.trace_form, 1.0);
        assert_eq!(forms.explicit_form, 1.0);
    }

    #[test]
    fn pair_is_never_totally_superradiant() {
        for d in [0.05, 0.2, 0.37, 0.8] {
            let cloud = line_lattice(2, d).unwrap();
            let c = build_coupling(&cloud).unwrap();
            let g12 = c.gamma[(0, 1)];
            let r = gdot_total_inverted(&c).unwrap();
            assert!(rel(r.gdot0, -2.0 + 2.0 * g12 * g12) < 1e-14);
            assert!(!r.superradiant);
            assert_eq!(r.gdot0, r.single_atom_term + r.pair_term);
        }
    }

    #[test]
    fn directional_dicke_limit() {
        // All phases zero (k_f ⊥ every displacement) and Γ_mn = Γ.
        let n = 6;
        let cloud = line_lattice(n, 0.3).unwrap();
        let c = CouplingSet::dicke(n);
        let r = gdot_directional_inverted(&c, &cloud, Vec3::x()).unwrap();
        assert!(rel(r.gdot0, (n * (n - 2)) as f64) < 1e-14);
    }

    #[test]
    fn parallel_detection_is_flagged() {
        let cloud = line_lattice(3, 0.3).unwrap();
        let c = build_coupling(&cloud).unwrap();
        assert!(gdot_directional_inverted(&c, &cloud, Vec3::z()).unwrap().dipole_parallel);
        assert!(!gdot_directional_inverted(&c, &cloud, Vec3::x()).unwrap().dipole_parallel);
    }

    #[test]
    fn partial_limits() {
        let cloud = random_cloud(9, 1.0, 0.05, 21).unwrap();
        let c = build_coupling(&cloud).unwrap();
        let kf = Vec3::new(0.2, 0.9, 0.1);
        let inv_t = gdot_total_inverted(&c).unwrap().gdot0;
        let inv_d = gdot_directional_inverted(&c, &cloud, kf).unwrap().gdot0;
        for variant in [PartialVariant::Verified, PartialVariant::AsPrinted] {
            for method in [SumMethod::Factorized, SumMethod::TripleSum] {
                let opts = PartialOptions { variant, method, ..Default::default() };
                let pi = DriveSpec::new(PI, Vec3::new(0.3, 0.1, 1.0)).unwrap();
                let zero = DriveSpec::new(0.0, Vec3::new(0.3, 0.1, 1.0)).unwrap();
                let t = gdot_total_partial(&c, &cloud, &pi, &opts).unwrap();
                assert!(rel(t.gdot0, inv_t) < 1e-12);
                assert!((t.gamma0 - 9.0).abs() < 1e-12);
                assert_eq!(gdot_total_partial(&c, &cloud, &zero, &opts).unwrap().gdot0, 0.0);
                let d = gdot_directional_partial(&c, &cloud, &pi, kf, &opts).unwrap();
                if variant == PartialVariant::Verified {
                    assert!(rel(d.gdot0, inv_d) < 1e-12);
                }
                let dz = gdot_directional_partial(&c, &cloud, &zero, kf, &opts).unwrap();
                assert_eq!(dz.gdot0, 0.0);
                assert_eq!(dz.gamma0, 0.0);
            }
        }
    }

    #[test]
    fn factorized_matches_triple_sum() {
        let cloud = random_cloud(11, 1.2, 0.05, 5).unwrap();
        let c = build_coupling(&cloud).unwrap();
        let drive = DriveSpec::new(1.1, Vec3::new(0.5, -0.2, 0.8)).unwrap();
        let kf = Vec3::new(1.0, 0.4, -0.3);
        for variant in [PartialVariant::Verified, PartialVariant::AsPrinted] {
            let f = PartialOptions { variant, ..Default::default() };
            let t = PartialOptions { method: SumMethod::TripleSum, ..f };
            let a = gdot_total_partial(&c, &cloud, &drive, &f).unwrap().gdot0;
            let b = gdot_total_partial(&c, &cloud, &drive, &t).unwrap().gdot0;
            assert!(rel(a, b) < 1e-12, "{a} vs {b}");
            let a = gdot_directional_partial(&c, &cloud, &drive, kf, &f).unwrap().gdot0;
            let b = gdot_directional_partial(&c, &cloud, &drive, kf, &t).unwrap().gdot0;
            assert!(rel(a, b) < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn variants_coincide_when_third_atom_term_vanishes() {
        // α = π/2 gives c = 0; with k_i ⊥ the array plane η = 0 as well.
        let cloud = random_cloud(7, 1.0, 0.05, 8).unwrap();
        let c = build_coupling(&cloud).unwrap();
        let drive = DriveSpec::new(PI / 2.0, Vec3::new(0.1, 0.7, 0.2)).unwrap();
        let v = PartialOptions::default();
        let p = PartialOptions { variant: PartialVariant::AsPrinted, ..v };
        let a = gdot_total_partial(&c, &cloud, &drive, &v).unwrap().gdot0;
        let b = gdot_total_partial(&c, &cloud, &drive, &p).unwrap().gdot0;
        assert!(rel(a, b) < 1e-13);
    }

    #[test]
    fn triple_sum_cap_enforced() {
        let cloud = line_lattice(12, 0.3).unwrap();
        let c = build_coupling(&cloud).unwrap();
        let opts = PartialOptions { method: SumMethod::TripleSum, triple_sum_cap: 10, ..Default::default() };
        let drive = DriveSpec::new(2.0, Vec3::z()).unwrap();
        assert!(matches!(gdot_total_partial(&c, &cloud, &drive, &opts), Err(Error::TooLarge(_))));
        let raised = PartialOptions { triple_sum_cap: 12, ..opts };
        assert!(gdot_total_partial(&c, &cloud, &drive, &raised).is_ok());
    }

    #[test]
    fn drive_validation() {
        assert!(DriveSpec::new(-0.1, Vec3::z()).is_err());
        assert!(DriveSpec::new(3.2, Vec3::z()).is_err());
        assert!(DriveSpec::new(1.0, Vec3::zeros()).is_err());
        let d = DriveSpec::new(PI / 2.0, Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert!((d.k_i.norm() - K).abs() < 1e-12);
        assert!((d.excited_fraction() - 0.5).abs() < 1e-15);
        let f = DriveSpec::from_excited_fraction(0.75, Vec3::z()).unwrap();
        assert!((f.excited_fraction() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn second_derivative_forms_agree() {
        let cloud = random_cloud(20, 1.5, 0.05, 13).unwrap();
        let c = build_coupling(&cloud).unwrap();
        let f = gddot_total_forms(&c).unwrap();
        assert!(f.rel_diff() < 1e-12, "{f:?}");
    }

    #[test]
    fn directional_second_derivative_dicke_limit() {
        // Zero phases, Γ_mn = Γ, Ω = 0: 8N − 2N² − 6N² + N³.
        for n in [1usize, 2, 5, 9] {
            let cloud = line_lattice(n, 0.4).unwrap();
            let c = CouplingSet::dicke(n);
            let r = gddot_directional_inverted(&c, &cloud, Vec3::x()).unwrap();
            let nf = n as f64;
            let expected = 8.0 * nf - 2.0 * nf * nf - 6.0 * nf * nf + nf.powi(3);
            assert!(rel(r.gddot0.unwrap(), expected) < 1e-13);
        }
    }

    #[test]
    fn multilevel_single_atom_and_limits() {
        let one = line_lattice(1, 1.0).unwrap();
        let ch = MultilevelChannel::new(0.4, K, KernelConvention::AsPrinted).unwrap();
        let ch2 = MultilevelChannel::new(0.6, 0.8 * K, KernelConvention::Kronecker).unwrap();
        let r = gdot_multilevel(&one, &[ch, ch2]).unwrap();
        assert_eq!(r[0].gdot0, -0.4);
        assert_eq!(r[1].gdot0, -0.6);
        assert_eq!(r[0].gamma0, 0.4);
        assert!(gdot_multilevel(&one, &[]).is_err());
    }

    #[test]
    fn multilevel_close_pair_kronecker() {
        // At j0 = 1, j2 = 0 the Kronecker kernel is Γ δ_ii', so each ordered pair
        // contributes (1/9)·3Γ²: γ̇ = −2Γ² + 2·(1/9)·3Γ².
        let cloud = AtomCloud::new(vec![Vec3::zeros(), Vec3::new(1e-7, 0.0, 0.0)], Vec3::z()).unwrap();
        let ch = MultilevelChannel::new(1.0, K, KernelConvention::Kronecker).unwrap();
        let r = gdot_multilevel(&cloud, &[ch]).unwrap();
        let expected = -2.0 + 2.0 * 3.0 / 9.0;
        assert!((r[0].gdot0 - expected).abs() < 1e-10);
        let ap = MultilevelChannel::new(1.0, K, KernelConvention::AsPrinted).unwrap();
        let r = gdot_multilevel(&cloud, &[ap]).unwrap();
        assert!(r[0].gdot0.abs() < 1e-10);
    }

    #[test]
    fn weak_channel_is_less_superradiant() {
        // A compact cluster: the weak channel pays −NΓ_fΓ but only gains ∝ Γ_f².
        let cloud = random_cloud(8, 0.15, 0.02, 1).unwrap();
        let strong = MultilevelChannel::new(0.9, K, KernelConvention::AsPrinted).unwrap();
        let weak = MultilevelChannel::new(0.1, K, KernelConvention::AsPrinted).unwrap();
        let r = gdot_multilevel(&cloud, &[strong, weak]).unwrap();
        let per_rate = |s: &SlopeResult, g: f64| s.gdot0 / (s.n as f64 * g);
        assert!(per_rate(&r[1], 0.1) < per_rate(&r[0], 0.9));
        assert!(r[0].superradiant);
        assert!(!r[1].superradiant);
    }

    #[test]
    fn eigen_check_limits() {
        let d = eigen_criterion_check(&CouplingSet::dicke(5)).unwrap();
        assert!((d.eigen_sum - 25.0).abs() < 1e-12);
        assert_eq!(d.trace_value, 25.0);
        let one = eigen_criterion_check(&CouplingSet::dicke(1)).unwrap();
        assert_eq!(one.trace_value, 1.0);
        assert!((one.eigen_sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn translation_invariance() {
        let cloud = random_cloud(8, 1.0, 0.05, 2).unwrap();
        let moved = cloud.translated(Vec3::new(3.7, -1.2, 0.4));
        let (a, b) = (build_coupling(&cloud).unwrap(), build_coupling(&moved).unwrap());
        let kf = Vec3::new(0.3, 1.0, 0.0);
        let drive = DriveSpec::new(1.3, Vec3::new(1.0, 1.0, 0.0)).unwrap();
        let opts = PartialOptions::default();
        let pairs = [
            (gdot_total_inverted(&a).unwrap().gdot0, gdot_total_inverted(&b).unwrap().gdot0),
            (
                gdot_directional_inverted(&a, &cloud, kf).unwrap().gdot0,
                gdot_directional_inverted(&b, &moved, kf).unwrap().gdot0,
            ),
            (
                gdot_directional_partial(&a, &cloud, &drive, kf, &opts).unwrap().gdot0,
                gdot_directional_partial(&b, &moved, &drive, kf, &opts).unwrap().gdot0,
            ),
            (
                gddot_directional_inverted(&a, &cloud, kf).unwrap().gddot0.unwrap(),
                gddot_directional_inverted(&b, &moved, kf).unwrap().gddot0.unwrap(),
            ),
        ];
        for (x, y) in pairs {
            assert!(rel(x, y) < 1e-9, "{x} vs {y}");
        }
    }
}
