//! Brute-force master-equation reference for small clouds.
//!
//! The full `2^N × 2^N` density matrix is propagated under
//!
//! ```text
//! dρ/dt = −i (H_eff ρ − ρ H_eff†) + Σ_nm Γ_nm σ⁻_n ρ σ⁺_m
//! H_eff = Σ_nm (Ω_nm − iΓ_nm/2) σ⁺_n σ⁻_m
//! ```
//!
//! Basis index bit `n` set means atom `n` is excited. Operators are applied by
//! bit manipulation; no superoperator is ever stored.
//!
//! Early-time derivatives of the photon rates are available two ways:
//! exactly from the generator (`Tr[R L(ρ₀)]`, `Tr[R L(L(ρ₀))]`) and by
//! Richardson-extrapolated one-sided finite differences of an RK4 trajectory.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::{build_coupling, CouplingSet};
use crate::criteria::{
    gddot_directional_inverted, gddot_total_inverted, gdot_directional_partial, gdot_total_partial, wavevector,
    DriveSpec, PartialOptions,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::AtomCloud;
use crate::{Vec3, GAMMA};

/// Largest atom number the oracle accepts.
pub const MAX_ATOMS: usize = 8;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = 1e-8;

type C64 = Complex64;

/// Dense row-major density matrix over `N ≤ 8` two-level atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn zeros(n: usize) -> Result<Self> {
        if n > MAX_ATOMS {
            return Err(Error::TooLarge(format!("master-equation oracle supports N ≤ {MAX_ATOMS}, got {n}")));
        }
        let dim = 1usize << n;
        Ok(Self { n, dim, data: vec![C64::new(0.0, 0.0); dim * dim] })
    }

    pub fn atoms(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|b| self.get(b, b)).sum()
    }

    /// `⟨σ⁺_m σ⁻_n⟩ = Σ_b ρ[b, b − n + m]` over states with `n` excited and,
    /// after lowering `n`, `m` in the ground state.
    pub fn coherence(&self, m: usize, n: usize) -> C64 {
        let (bm, bn) = (1usize << m, 1usize << n);
        let mut acc = C64::new(0.0, 0.0);
        for b in 0..self.dim {
            if b & bn == 0 {
                continue;
            }
            let lowered = b ^ bn;
            if lowered & bm != 0 {
                continue;
            }
            acc += self.get(b, lowered | bm);
        }
        acc
    }

    /// `⟨ê_n⟩`.
    pub fn excitation(&self, n: usize) -> f64 {
        self.coherence(n, n).re
    }

    /// Largest `|ρ − ρ†|` entry.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let m = DMatrix::from_fn(self.dim, self.dim, |r, c| 0.5 * (self.get(r, c) + self.get(c, r).conj()));
        let eig = SymmetricEigen::try_new(m, 1e-14, 10_000)
            .ok_or_else(|| Error::Numerical("density-matrix eigensolver did not converge".into()))?;
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Unit trace, Hermiticity and positivity within the oracle tolerances.
    pub fn check_state(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).norm() > TRACE_TOL {
            return Err(Error::Numerical(format!("density matrix trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::Numerical(format!("density matrix not Hermitian: {herm:e}")));
        }
        let min = self.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(Error::Numerical(format!("density matrix eigenvalue {min:e} below zero")));
        }
        Ok(())
    }

    fn axpy(&mut self, a: f64, x: &DensityMatrix) {
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }
}

/// Product state `⊗_n [cos(α/2)|g⟩ + e^{i k_i·R_n} sin(α/2)|e⟩]`.
pub fn initial_state(cloud: &AtomCloud, drive: &DriveSpec) -> Result<DensityMatrix> {
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("need at least one atom"));
    }
    let mut rho = DensityMatrix::zeros(n)?;
    let (sh, ch) = (0.5 * drive.alpha).sin_cos();
    let excited: Vec<C64> = cloud.positions().iter().map(|r| C64::from_polar(sh, drive.k_i.dot(r))).collect();
    let psi: Vec<C64> = (0..rho.dim)
        .map(|b| (0..n).fold(C64::new(1.0, 0.0), |amp, a| if b >> a & 1 == 1 { amp * excited[a] } else { amp * ch }))
        .collect();
    let dim = rho.dim;
    for r in 0..dim {
        for c in 0..dim {
            rho.data[r * dim + c] = psi[r] * psi[c].conj();
        }
    }
    Ok(rho)
}

/// Right-hand side of the master equation.
pub fn lindblad_rhs(rho: &DensityMatrix, c: &CouplingSet) -> Result<DensityMatrix> {
    let n = rho.n;
    if c.len() != n {
        return Err(invalid(format!("coupling set has {} atoms, state has {n}", c.len())));
    }
    let dim = rho.dim;
    let mut out = DensityMatrix { n, dim, data: vec![C64::new(0.0, 0.0); dim * dim] };
    let minus_i = C64::new(0.0, -1.0);
    for a in 0..n {
        for b in 0..n {
            // h_ab σ⁺_a σ⁻_b
            let h = C64::new(c.omega[(a, b)], -0.5 * c.gamma[(a, b)]);
            let (ba, bb) = (1usize << a, 1usize << b);
            let hl = minus_i * h;
            let hr = minus_i * h.conj();
            for src in 0..dim {
                if src & bb == 0 || (src ^ bb) & ba != 0 {
                    continue;
                }
                let dst = (src ^ bb) | ba;
                // −i H ρ: row dst gains h ρ[src, :]
                for col in 0..dim {
                    let v = rho.data[src * dim + col];
                    out.data[dst * dim + col] += hl * v;
                }
                // +i ρ H†: column dst gains conj(h) ρ[:, src]
                for row in 0..dim {
                    let v = rho.data[row * dim + src];
                    out.data[row * dim + dst] -= hr * v;
                }
            }
            // Γ_ab σ⁻_a ρ σ⁺_b
            let g = c.gamma[(a, b)];
            if g == 0.0 {
                continue;
            }
            for row in (0..dim).filter(|r| r & ba == 0) {
                let src_row = (row | ba) * dim;
                for col in (0..dim).filter(|c| c & bb == 0) {
                    out.data[row * dim + col] += g * rho.data[src_row + (col | bb)];
                }
            }
        }
    }
    Ok(out)
}

/// Weights `w_mn` of a rate observable `Σ_mn w_mn ⟨σ⁺_m σ⁻_n⟩`.
#[derive(Clone, Debug)]
pub struct RateObservable {
    weights: DMatrix<C64>,
}

impl RateObservable {
    /// Total rate: `w_mn = Γ_mn`.
    pub fn total(c: &CouplingSet) -> Self {
        Self { weights: c.gamma.map(|g| C64::new(g, 0.0)) }
    }

    /// Rate into `k_f`: `w_mn = Γ e^{i k_f·(R_m − R_n)}`.
    pub fn directional(cloud: &AtomCloud, k_f: Vec3) -> Self {
        let p = cloud.positions();
        Self { weights: DMatrix::from_fn(p.len(), p.len(), |m, n| C64::from_polar(GAMMA, k_f.dot(&(p[m] - p[n])))) }
    }

    pub fn expect(&self, rho: &DensityMatrix) -> f64 {
        let n = rho.n;
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..n {
            for nn in 0..n {
                acc += self.weights[(m, nn)] * rho.coherence(m, nn);
            }
        }
        acc.re
    }
}

fn rk4_step(rho: &DensityMatrix, c: &CouplingSet, dt: f64) -> Result<DensityMatrix> {
    let k1 = lindblad_rhs(rho, c)?;
    let mut tmp = rho.clone();
    tmp.axpy(0.5 * dt, &k1);
    let k2 = lindblad_rhs(&tmp, c)?;
    let mut tmp = rho.clone();
    tmp.axpy(0.5 * dt, &k2);
    let k3 = lindblad_rhs(&tmp, c)?;
    let mut tmp = rho.clone();
    tmp.axpy(dt, &k3);
    let k4 = lindblad_rhs(&tmp, c)?;
    let mut next = rho.clone();
    next.axpy(dt / 6.0, &k1);
    next.axpy(dt / 3.0, &k2);
    next.axpy(dt / 3.0, &k3);
    next.axpy(dt / 6.0, &k4);
    Ok(next)
}

/// Sampled photon rates along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub gamma_total: Vec<f64>,
    pub gamma_dir: Option<Vec<f64>>,
}

/// Integrates with fixed RK4 steps of `dt`, sampling every `sample_every` steps.
///
/// The state is checked for unit trace, Hermiticity and positivity at every
/// sample; a violation aborts with the offending time in the message.
pub fn evolve(
    rho0: &DensityMatrix,
    c: &CouplingSet,
    cloud: &AtomCloud,
    k_f: Option<Vec3>,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) || sample_every == 0 {
        return Err(invalid("evolve needs dt > 0, t_end ≥ 0 and sample_every ≥ 1"));
    }
    if cloud.len() != rho0.n {
        return Err(invalid("cloud and state sizes differ"));
    }
    let total = RateObservable::total(c);
    let dir = k_f.map(|k| wavevector(k).map(|k| RateObservable::directional(cloud, k))).transpose()?;
    let steps = (t_end / dt).round() as usize;
    let mut traj = Trajectory { t: Vec::new(), gamma_total: Vec::new(), gamma_dir: dir.as_ref().map(|_| Vec::new()) };
    let mut rho = rho0.clone();
    for step in 0..=steps {
        if step % sample_every == 0 || step == steps {
            let t = step as f64 * dt;
            rho.check_state().map_err(|e| Error::Numerical(format!("at t = {t}: {e}")))?;
            traj.t.push(t);
            traj.gamma_total.push(total.expect(&rho));
            if let (Some(obs), Some(v)) = (&dir, traj.gamma_dir.as_mut()) {
                v.push(obs.expect(&rho));
            }
        }
        if step < steps {
            rho = rk4_step(&rho, c, dt)?;
        }
    }
    Ok(traj)
}

/// Finite-difference settings: base step `h`, number of Richardson levels
/// (steps `h, h/2, …`), and RK4 substeps per finest sample spacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub h: f64,
    pub levels: usize,
    pub substeps: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { h: 0.02, levels: 4, substeps: 5 }
    }
}

impl OracleOptions {
    pub fn dt(&self) -> f64 {
        self.h / (1usize << (self.levels - 1)) as f64 / self.substeps as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) || self.levels == 0 || self.levels > 10 || self.substeps == 0 {
            return Err(invalid("oracle options need h > 0, 1 ≤ levels ≤ 10, substeps ≥ 1"));
        }
        Ok(())
    }

    fn halved_dt(&self) -> Self {
        Self { substeps: 2 * self.substeps, ..*self }
    }
}

/// `f(0)`, `f'(0)`, `f''(0)` of one rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDerivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Exact derivatives from the generator: `Tr[R L^k(ρ₀)]`.
pub fn generator_derivatives(rho0: &DensityMatrix, c: &CouplingSet, obs: &RateObservable) -> Result<RateDerivatives> {
    let l1 = lindblad_rhs(rho0, c)?;
    let l2 = lindblad_rhs(&l1, c)?;
    Ok(RateDerivatives { value: obs.expect(rho0), first: obs.expect(&l1), second: obs.expect(&l2) })
}

fn richardson(mut column: Vec<f64>) -> f64 {
    // column[i] has step h/2^i and an error series in all integer powers of h.
    let levels = column.len();
    for j in 1..levels {
        let factor = (1u64 << j) as f64;
        for i in (j..levels).rev() {
            column[i] = (factor * column[i] - column[i - 1]) / (factor - 1.0);
        }
    }
    column[levels - 1]
}

/// Finite-difference derivatives at `t = 0⁺` for each observable.
pub fn finite_difference_derivatives(
    rho0: &DensityMatrix,
    c: &CouplingSet,
    observables: &[&RateObservable],
    opts: &OracleOptions,
) -> Result<Vec<RateDerivatives>> {
    opts.validate()?;
    let finest = 1usize << (opts.levels - 1);
    let delta = opts.h / finest as f64;
    let dt = opts.dt();
    // samples at j·δ for j = 0..=2·2^(levels−1)
    let count = 2 * finest;
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(count + 1); observables.len()];
    let mut rho = rho0.clone();
    for j in 0..=count {
        if j > 0 {
            for _ in 0..opts.substeps {
                rho = rk4_step(&rho, c, dt)?;
            }
        }
        for (s, obs) in samples.iter_mut().zip(observables) {
            s.push(obs.expect(&rho));
        }
    }
    rho.check_state()?;
    Ok(samples
        .iter()
        .map(|f| {
            let (d1, d2): (Vec<f64>, Vec<f64>) = (0..opts.levels)
                .map(|i| {
                    let stride = finest >> i;
                    let h = stride as f64 * delta;
                    let first = (f[stride] - f[0]) / h;
                    let second = (f[2 * stride] - 2.0 * f[stride] + f[0]) / (h * h);
                    (first, second)
                })
                .unzip();
            RateDerivatives { value: f[0], first: richardson(d1), second: richardson(d2) }
        })
        .collect())
}

/// Difference relative to `max(|a|, |b|, floor)`; the floor is the
/// single-atom scale of the quantity so near-zero slopes stay well defined.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Closed-form value set against the master-equation reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub n: usize,
    pub alpha: f64,
    pub k_f: Option<Vec3>,
    pub formula_value: f64,
    /// Richardson finite difference of the integrated trajectory.
    pub oracle_value: f64,
    /// `Tr[R L(ρ₀)]` (or `Tr[R L²(ρ₀)]` for second derivatives).
    pub generator_value: f64,
    pub rel_diff: f64,
    pub generator_rel_diff: f64,
    /// Change of the oracle value when the integration step is halved.
    pub dt_sensitivity: f64,
}

fn prepare(cloud: &AtomCloud, k_f: Option<Vec3>) -> Result<(CouplingSet, RateObservable)> {
    if cloud.len() > MAX_ATOMS {
        return Err(Error::TooLarge(format!("oracle supports N ≤ {MAX_ATOMS}, got {}", cloud.len())));
    }
    let c = build_coupling(cloud)?;
    let obs = match k_f {
        None => RateObservable::total(&c),
        Some(k) => RateObservable::directional(cloud, wavevector(k)?),
    };
    Ok((c, obs))
}

#[allow(clippy::too_many_arguments)]
fn check_from(
    cloud: &AtomCloud,
    alpha: f64,
    k_f: Option<Vec3>,
    formula: f64,
    floor: f64,
    pick: impl Fn(&RateDerivatives) -> f64,
    rho0: &DensityMatrix,
    c: &CouplingSet,
    obs: &RateObservable,
    opts: &OracleOptions,
) -> Result<SlopeCheck> {
    let gen = pick(&generator_derivatives(rho0, c, obs)?);
    let fd = pick(&finite_difference_derivatives(rho0, c, &[obs], opts)?[0]);
    let fd_fine = pick(&finite_difference_derivatives(rho0, c, &[obs], &opts.halved_dt())?[0]);
    Ok(SlopeCheck {
        n: cloud.len(),
        alpha,
        k_f: k_f.map(wavevector).transpose()?,
        formula_value: formula,
        oracle_value: fd,
        generator_value: gen,
        rel_diff: relative_difference(formula, fd, floor),
        generator_rel_diff: relative_difference(formula, gen, floor),
        dt_sensitivity: relative_difference(fd, fd_fine, floor),
    })
}

/// Compares `γ̇(0)` (total, or into `k_f`) from the closed form with the
/// master-equation reference.
pub fn slope_check(
    cloud: &AtomCloud,
    drive: &DriveSpec,
    k_f: Option<Vec3>,
    partial: &PartialOptions,
    opts: &OracleOptions,
) -> Result<SlopeCheck> {
    let (c, obs) = prepare(cloud, k_f)?;
    let formula = match k_f {
        None => gdot_total_partial(&c, cloud, drive, partial)?.gdot0,
        Some(k) => gdot_directional_partial(&c, cloud, drive, k, partial)?.gdot0,
    };
    let rho0 = initial_state(cloud, drive)?;
    let floor = cloud.len() as f64 * GAMMA * GAMMA * drive.excited_fraction().max(1e-3);
    check_from(cloud, drive.alpha, k_f, formula, floor, |d| d.first, &rho0, &c, &obs, opts)
}

/// Compares the fully inverted `γ̈(0)` closed form with the reference.
pub fn second_derivative_check(cloud: &AtomCloud, k_f: Option<Vec3>, opts: &OracleOptions) -> Result<SlopeCheck> {
    let (c, obs) = prepare(cloud, k_f)?;
    let formula = match k_f {
        None => gddot_total_inverted(&c)?.gddot0,
        Some(k) => gddot_directional_inverted(&c, cloud, k)?.gddot0,
    }
    .ok_or_else(|| Error::Numerical("second derivative missing from result".into()))?;
    let drive = DriveSpec::inverted();
    let rho0 = initial_state(cloud, &drive)?;
    let floor = cloud.len() as f64 * GAMMA.powi(3);
    check_from(cloud, drive.alpha, k_f, formula, floor, |d| d.second, &rho0, &c, &obs, opts)
}
