//! O(N) slope evaluation for Bravais arrays.
//!
//! On an `N1^dim` array every pair is characterised by its integer
//! displacement `ν`, and exactly `Π_i (N1 − |ν_i|)` pairs share it. Dividing by
//! `N = N1^dim` gives the weight `W_ν = Π_i (1 − |ν_i|/N1)` and
//!
//! ```text
//! γ̇(0)/(NΓ²)     = −2 + Σ_ν W_ν Γ_ν²/Γ²
//! γ̇(0,k_f)/(NΓ²) = −2 + Σ_ν W_ν (Γ_ν/Γ) cos(k_f·R_ν)
//! ```
//!
//! with `−N1 < ν_i < N1`. Both summands are even in `ν`, so only the half
//! space is visited and off-origin terms are doubled.
//!
//! Expanding `W_ν` in elementary symmetric polynomials of `|ν_i|` turns the
//! sum into shell moments that are independent of `N1`; [`scaled_slope_sweep`]
//! uses this to produce the scaled slope for every `N1 ≤ n1_max` at the cost
//! of a single evaluation at `n1_max`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::gamma_pair;
use crate::criteria::{wavevector, SlopeResult};
use crate::error::{invalid, Error, Result};
use crate::geometry::LatticeSpec;
use crate::{Vec3, GAMMA, K};

/// Total rate, or rate into a detection wavevector (scaled to `|k_f| = k`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SlopeKind {
    Total,
    Directional(Vec3),
}

impl SlopeKind {
    fn normalized(self) -> Result<Self> {
        Ok(match self {
            SlopeKind::Total => SlopeKind::Total,
            SlopeKind::Directional(k) => SlopeKind::Directional(wavevector(k)?),
        })
    }

    pub fn k_f(&self) -> Option<Vec3> {
        match self {
            SlopeKind::Total => None,
            SlopeKind::Directional(k) => Some(*k),
        }
    }

    /// Summand for a displacement with decay coupling `gamma` at position `r`.
    #[inline]
    fn term(&self, gamma: f64, r: &Vec3) -> f64 {
        match self {
            SlopeKind::Total => gamma * gamma / (GAMMA * GAMMA),
            SlopeKind::Directional(k) => gamma / GAMMA * k.dot(r).cos(),
        }
    }
}

/// `W_ν = Π_i (1 − |ν_i|/N1)` over the first `dim` components.
pub fn weight(nu: [i64; 3], n1: usize, dim: usize) -> f64 {
    let n1 = n1 as f64;
    nu[..dim].iter().map(|&v| 1.0 - v.unsigned_abs() as f64 / n1).product()
}

/// Number of ordered atom pairs sharing displacement `ν`, `Π_i (N1 − |ν_i|)`.
pub fn pair_count(nu: [i64; 3], n1: usize, dim: usize) -> u64 {
    nu[..dim].iter().map(|&v| (n1 as u64).saturating_sub(v.unsigned_abs())).product()
}

/// Visits the half space of displacements (lexicographically ≥ 0) for a
/// given first component, calling `f(ν, multiplicity)`.
#[inline]
fn for_each_in_slab(nu1: i64, n1: i64, dim: usize, mut f: impl FnMut([i64; 3], f64)) {
    let span = |axis: usize| if axis < dim { -(n1 - 1)..=(n1 - 1) } else { 0..=0 };
    for nu2 in span(1) {
        if nu1 == 0 && nu2 < 0 {
            continue;
        }
        for nu3 in span(2) {
            if nu1 == 0 && nu2 == 0 && nu3 < 0 {
                continue;
            }
            let mult = if nu1 == 0 && nu2 == 0 && nu3 == 0 { 1.0 } else { 2.0 };
            f([nu1, nu2, nu3], mult);
        }
    }
}

/// Outer-index chunk size; fixed so results do not depend on the thread count.
fn outer_chunk(dim: usize) -> usize {
    if dim == 1 {
        4096
    } else {
        1
    }
}

/// Kernel value at a lattice displacement; the origin carries `Γ_nn = Γ`.
#[inline]
fn lattice_gamma(spec: &LatticeSpec, nu: [i64; 3], r: &Vec3) -> f64 {
    if nu == [0, 0, 0] {
        GAMMA
    } else {
        gamma_pair(*r, spec.dipole(), spec.mode())
    }
}

fn weighted_sum(spec: &LatticeSpec, kind: &SlopeKind) -> f64 {
    let n1 = spec.n1() as i64;
    let dim = spec.dim();
    let outer: Vec<i64> = (0..n1).collect();
    let parts: Vec<f64> = outer
        .par_chunks(outer_chunk(dim))
        .map(|chunk| {
            let mut acc = 0.0;
            for &nu1 in chunk {
                for_each_in_slab(nu1, n1, dim, |nu, mult| {
                    let r = spec.point(nu);
                    let g = lattice_gamma(spec, nu, &r);
                    acc += mult * weight(nu, spec.n1(), dim) * kind.term(g, &r);
                });
            }
            acc
        })
        .collect();
    parts.iter().sum()
}

/// `γ̇(0)/(NΓ²)` on the array, by the weighted displacement sum.
pub fn scaled_slope(spec: &LatticeSpec, kind: SlopeKind) -> Result<f64> {
    let kind = kind.normalized()?;
    Ok(-2.0 + weighted_sum(spec, &kind))
}

fn to_result(spec: &LatticeSpec, scaled: f64, k_f: Option<Vec3>) -> SlopeResult {
    let nf = spec.n_atoms() as f64;
    let g2 = GAMMA * GAMMA;
    SlopeResult {
        n: spec.n_atoms(),
        alpha: std::f64::consts::PI,
        k_i: None,
        k_f,
        gamma0: nf * GAMMA,
        gdot0: nf * g2 * scaled,
        gddot0: None,
        single_atom_term: -nf * g2,
        pair_term: nf * g2 * (scaled + 1.0),
        superradiant: scaled > 0.0,
        dipole_parallel: k_f.is_some_and(|k| k.normalize().cross(&spec.dipole()).norm() < 1e-12),
    }
}

/// Fully inverted total-rate slope in O(N).
pub fn gdot_total_fast(spec: &LatticeSpec) -> SlopeResult {
    let scaled = -2.0 + weighted_sum(spec, &SlopeKind::Total);
    to_result(spec, scaled, None)
}

/// Fully inverted directional slope in O(N).
pub fn gdot_directional_fast(spec: &LatticeSpec, k_f: Vec3) -> Result<SlopeResult> {
    let kind = SlopeKind::Directional(k_f).normalized()?;
    let scaled = -2.0 + weighted_sum(spec, &kind);
    Ok(to_result(spec, scaled, kind.k_f()))
}

/// One half-space displacement with its weight and kernel value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTerm {
    pub nu: [i64; 3],
    pub r: Vec3,
    /// `W_ν` times the half-space multiplicity (1 at the origin, else 2).
    pub weight: f64,
    pub gamma: f64,
}

/// Materialized weighted kernel, reusable across many detection directions.
#[derive(Clone, Debug)]
pub struct WeightedKernel {
    pub n_atoms: usize,
    pub terms: Vec<KernelTerm>,
}

impl WeightedKernel {
    pub fn new(spec: &LatticeSpec) -> Self {
        let n1 = spec.n1() as i64;
        let dim = spec.dim();
        let mut terms = Vec::new();
        for nu1 in 0..n1 {
            for_each_in_slab(nu1, n1, dim, |nu, mult| {
                let r = spec.point(nu);
                terms.push(KernelTerm {
                    nu,
                    r,
                    weight: mult * weight(nu, spec.n1(), dim),
                    gamma: lattice_gamma(spec, nu, &r),
                });
            });
        }
        Self { n_atoms: spec.n_atoms(), terms }
    }

    /// Scaled slope for a kind whose `k_f` is already normalized.
    pub fn scaled(&self, kind: &SlopeKind) -> f64 {
        -2.0 + self.terms.iter().map(|t| t.weight * kind.term(t.gamma, &t.r)).sum::<f64>()
    }
}

/// Scaled slope for every `N1 = 1..=n1_max` of the lattice family of `spec`
/// (same vectors and dipole); entry `i` holds `N1 = i + 1`.
pub fn scaled_slope_sweep(spec: &LatticeSpec, kind: SlopeKind, n1_max: usize) -> Result<Vec<f64>> {
    if n1_max == 0 {
        return Err(invalid("sweep needs n1_max ≥ 1"));
    }
    let kind = kind.normalized()?;
    let dim = spec.dim();
    let big = n1_max as i64;
    let outer: Vec<i64> = (0..big).collect();
    // Fixed chunk count so the reduction order depends only on n1_max.
    let chunk = n1_max.div_ceil(64).max(1);
    let parts: Vec<Vec<[f64; 4]>> = outer
        .par_chunks(chunk)
        .map(|outer_chunk| {
            let mut shells = vec![[0.0f64; 4]; n1_max];
            for &nu1 in outer_chunk {
                for_each_in_slab(nu1, big, dim, |nu, mult| {
                    let r = spec.point(nu);
                    let val = mult * kind.term(lattice_gamma(spec, nu, &r), &r);
                    let a = nu.map(|v| v.unsigned_abs() as f64);
                    let shell = nu.iter().map(|v| v.unsigned_abs()).max().unwrap() as usize;
                    let e = elementary_symmetric(&a[..dim]);
                    for (slot, ej) in shells[shell].iter_mut().zip(e) {
                        *slot += val * ej;
                    }
                });
            }
            shells
        })
        .collect();

    let mut moments = vec![[0.0f64; 4]; n1_max];
    for part in &parts {
        for (m, p) in moments.iter_mut().zip(part) {
            for j in 0..4 {
                m[j] += p[j];
            }
        }
    }
    let mut running = [0.0f64; 4];
    Ok(moments
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            for j in 0..4 {
                running[j] += m[j];
            }
            let n = (idx + 1) as f64;
            let mut s = -2.0;
            let mut scale = 1.0;
            for (j, r) in running.iter().enumerate().take(dim + 1) {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                s += sign * r / scale;
                scale *= n;
            }
            s
        })
        .collect())
}

/// `[1, e1, e2, e3]` of up to three values (missing entries are zero).
fn elementary_symmetric(a: &[f64]) -> [f64; 4] {
    let mut e = [1.0, 0.0, 0.0, 0.0];
    for &x in a {
        for j in (1..4).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// Outcome of a threshold search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Smallest N1 whose scaled slope is positive, if any within the horizon.
    pub n1_threshold: Option<usize>,
    pub slope_at_threshold: Option<f64>,
    /// Largest scaled slope seen and where, reported either way.
    pub largest_slope: f64,
    pub largest_at: usize,
    pub n1_searched: usize,
}

/// Smallest `N1 ≤ n1_max` with a positive scaled slope.
///
/// The horizon doubles from 16 until a positive slope appears; every `N1`
/// below the bracket is inspected, so non-monotone dips cannot hide an
/// earlier onset.
pub fn threshold_n1(spec: &LatticeSpec, kind: SlopeKind, n1_max: usize) -> Result<Threshold> {
    if n1_max == 0 {
        return Err(invalid("threshold search needs n1_max ≥ 1"));
    }
    let mut horizon = 16.min(n1_max);
    loop {
        let slopes = scaled_slope_sweep(spec, kind, horizon)?;
        let (largest_at, largest_slope) =
            slopes
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i + 1, s) } else { best });
        if let Some(idx) = slopes.iter().position(|&s| s > 0.0) {
            return Ok(Threshold {
                n1_threshold: Some(idx + 1),
                slope_at_threshold: Some(slopes[idx]),
                largest_slope,
                largest_at,
                n1_searched: horizon,
            });
        }
        if horizon >= n1_max {
            return Ok(Threshold {
                n1_threshold: None,
                slope_at_threshold: None,
                largest_slope,
                largest_at,
                n1_searched: horizon,
            });
        }
        horizon = (2 * horizon).min(n1_max);
    }
}

/// Standard square (dim 2) or cubic (dim 3) array with spacing `d`, dipole `ẑ`.
pub fn standard_lattice(dim: usize, n1: usize, d: f64) -> Result<LatticeSpec> {
    match dim {
        1 => LatticeSpec::line(n1, d),
        2 => LatticeSpec::square(n1, d),
        3 => LatticeSpec::cubic(n1, d),
        _ => Err(invalid(format!("lattice dimension must be 1, 2 or 3, got {dim}"))),
    }
}

/// Least-squares asymptote `C + D x`, with `x = ln N1` (2D) or `x = N1` (3D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteFit {
    pub dim: usize,
    pub d: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d_coef: f64,
    /// `D (d/λ)²`, the coefficient of `λ²/d²` in the asymptotic form.
    pub d_scaled: f64,
    pub rms: f64,
    pub n1_min: usize,
    pub n1_max: usize,
    pub points: usize,
}

impl AsymptoteFit {
    /// N1 where the fitted line crosses zero (extrapolation, not a computed onset).
    pub fn extrapolated_threshold(&self) -> f64 {
        let x0 = -self.c / self.d_coef;
        if self.dim == 2 {
            x0.exp()
        } else {
            x0
        }
    }
}

/// Default fit windows: `[50, 400]` in 2D and `[6, 60]` in 3D.
pub fn default_fit_window(dim: usize) -> Option<(usize, usize)> {
    match dim {
        2 => Some((50, 400)),
        3 => Some((6, 60)),
        _ => None,
    }
}

/// Fits the total-rate scaled slope of the standard square / cubic array over
/// every integer `N1` in `[n1_min, n1_max]`.
pub fn fit_asymptote(dim: usize, d: f64, n1_min: usize, n1_max: usize) -> Result<AsymptoteFit> {
    if dim != 2 && dim != 3 {
        return Err(invalid("asymptotic fits are defined for dim 2 and 3"));
    }
    if n1_min == 0 || n1_max < n1_min || n1_max - n1_min + 1 < 10 {
        return Err(invalid(format!("fit needs at least 10 sample points, got [{n1_min}, {n1_max}]")));
    }
    let spec = standard_lattice(dim, 1, d)?;
    let slopes = scaled_slope_sweep(&spec, SlopeKind::Total, n1_max)?;
    let xs: Vec<f64> = (n1_min..=n1_max).map(|n| if dim == 2 { (n as f64).ln() } else { n as f64 }).collect();
    let ys: Vec<f64> = (n1_min..=n1_max).map(|n| slopes[n - 1]).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx.is_nan() || sxx <= 1e-12 * m {
        return Err(Error::Numerical("degenerate fit design matrix".into()));
    }
    let d_coef = sxy / sxx;
    let c = my - d_coef * mx;
    let rms = (xs.iter().zip(&ys).map(|(x, y)| (y - c - d_coef * x).powi(2)).sum::<f64>() / m).sqrt();
    Ok(AsymptoteFit { dim, d, c, d_coef, d_scaled: d_coef * d * d, rms, n1_min, n1_max, points: xs.len() })
}

/// Infinite-line limit of the scaled slope, truncated symmetrically at `±nu_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineLimit {
    pub value: f64,
    pub nu_max: usize,
    /// Upper bound on the omitted tail (total kind only).
    pub tail_bound: Option<f64>,
    /// The directional series converges only conditionally; the value is the
    /// symmetric partial sum.
    pub conditionally_convergent: bool,
}

/// `lim_{N→∞}` of the scaled slope of a line along `ŷ` (dipole `ẑ`, ΔM = 0).
pub fn limit_1d(d: f64, kind: SlopeKind, nu_max: usize) -> Result<LineLimit> {
    if nu_max == 0 {
        return Err(invalid("nu_max must be at least 1"));
    }
    let spec = LatticeSpec::line(1, d)?;
    let kind = kind.normalized()?;
    let axis = spec.vectors()[0];
    let terms: Vec<f64> = (1..=nu_max as i64)
        .into_par_iter()
        .map(|nu| {
            let r = axis * nu as f64;
            kind.term(gamma_pair(r, spec.dipole(), spec.mode()), &r)
        })
        .collect();
    let value = -2.0 + 1.0 + 2.0 * terms.iter().sum::<f64>();
    let tail_bound = match kind {
        SlopeKind::Total => {
            // For s ≥ s_min: |Γ(s)| ≤ c/s with c = 1 + |P|(1 + 3/s_min + 3/s_min²).
            let kd = K * d;
            let s_min = kd * (nu_max as f64 + 1.0);
            let p = spec.mode().coefficient(axis.normalize().dot(&spec.dipole())).abs();
            let c = 1.0 + p * (1.0 + 3.0 / s_min + 3.0 / (s_min * s_min));
            Some(2.0 * c * c / (kd * kd * nu_max as f64))
        }
        SlopeKind::Directional(_) => None,
    };
    Ok(LineLimit { value, nu_max, tail_bound, conditionally_convergent: matches!(kind, SlopeKind::Directional(_)) })
}
