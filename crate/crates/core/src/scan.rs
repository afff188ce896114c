//! Region maps over (N, d) and (φ, d) grids, partial-inversion sweeps and
//! random atom-removal studies.
//!
//! Every cell is computed independently: the same cell evaluated alone gives
//! a bitwise identical value. Cells are distributed over the rayon pool and
//! gathered back in grid order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{build_coupling, gamma_pair};
use crate::criteria::{gdot_directional_partial, gdot_total_partial, in_plane_wavevector, DriveSpec, PartialOptions};
use crate::error::{invalid, Error, Result};
use crate::geometry::{double_line_lattice, thin_cloud, AtomCloud, LatticeSpec};
use crate::lattice_fast::{scaled_slope, SlopeKind, WeightedKernel};
use crate::GAMMA;

/// Default d resolution of region maps, in wavelengths.
pub const DEFAULT_D_STEP: f64 = 0.005;
/// Default φ resolution of region maps.
pub const DEFAULT_PHI_STEP: f64 = std::f64::consts::PI / 200.0;
/// Excited-fraction resolution of partial-inversion sweeps.
pub const EXCITED_FRACTION_STEP: f64 = 0.05;
/// Survival fraction below which a region counts as lost in removal studies.
pub const SURVIVAL_CRITERION: f64 = 0.5;

/// Geometry families scanned by the maps. For `Square` and `Cubic` the size
/// parameter is the side length `N1`; otherwise it is the atom count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Line,
    DoubleLine,
    Square,
    Cubic,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Line => "line",
            Family::DoubleLine => "double_line",
            Family::Square => "square",
            Family::Cubic => "cubic",
        }
    }

    /// Lattice description for Bravais families.
    pub fn lattice(&self, size: usize, d: f64) -> Option<Result<LatticeSpec>> {
        match self {
            Family::Line => Some(LatticeSpec::line(size, d)),
            Family::Square => Some(LatticeSpec::square(size, d)),
            Family::Cubic => Some(LatticeSpec::cubic(size, d)),
            Family::DoubleLine => None,
        }
    }

    pub fn cloud(&self, size: usize, d: f64) -> Result<AtomCloud> {
        match self.lattice(size, d) {
            Some(spec) => {
                let spec = spec?;
                Ok(spec.expand().labelled(format!("{} size={size} d={d}", self.name())))
            }
            None => double_line_lattice(size, d),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Family::Line),
            "double_line" | "double-line" => Ok(Family::DoubleLine),
            "square" => Ok(Family::Square),
            "cubic" => Ok(Family::Cubic),
            _ => Err(invalid(format!("unknown family '{s}' (line, double_line, square, cubic)"))),
        }
    }
}

/// Scaled fully inverted slope of an arbitrary cloud from `Γ_nm` alone.
pub fn naive_scaled(cloud: &AtomCloud, kind: SlopeKind) -> f64 {
    let p = cloud.positions();
    let n = p.len();
    if n == 0 {
        return f64::NAN;
    }
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut acc = 0.0;
            for b in a + 1..n {
                let r = p[a] - p[b];
                let g = gamma_pair(r, cloud.dipole(), cloud.mode()) / GAMMA;
                acc += match kind {
                    SlopeKind::Total => g * g,
                    SlopeKind::Directional(k) => g * k.dot(&r).cos(),
                };
            }
            acc
        })
        .collect();
    -1.0 + 2.0 * rows.iter().sum::<f64>() / n as f64
}

fn normalized(kind: SlopeKind) -> Result<SlopeKind> {
    Ok(match kind {
        SlopeKind::Total => SlopeKind::Total,
        SlopeKind::Directional(k) => SlopeKind::Directional(crate::criteria::wavevector(k)?),
    })
}

/// Scaled slope of one (N, d) cell.
pub fn cell_n_d(family: Family, kind: SlopeKind, size: usize, d: f64) -> Result<f64> {
    match family.lattice(size, d) {
        Some(spec) => scaled_slope(&spec?, kind),
        None => Ok(naive_scaled(&family.cloud(size, d)?, normalized(kind)?)),
    }
}

/// Per-d kernel reused across all φ samples of a row.
enum RowKernel {
    Lattice(WeightedKernel),
    Cloud(AtomCloud),
}

impl RowKernel {
    fn new(family: Family, size: usize, d: f64) -> Result<Self> {
        Ok(match family.lattice(size, d) {
            Some(spec) => RowKernel::Lattice(WeightedKernel::new(&spec?)),
            None => RowKernel::Cloud(family.cloud(size, d)?),
        })
    }

    fn scaled(&self, phi: f64) -> f64 {
        let kind = SlopeKind::Directional(in_plane_wavevector(phi));
        match self {
            RowKernel::Lattice(k) => k.scaled(&kind),
            RowKernel::Cloud(c) => naive_scaled(c, kind),
        }
    }
}

/// Scaled directional slope of one (φ, d) cell, `k_f = k(x̂ cos φ + ŷ sin φ)`.
pub fn cell_phi_d(family: Family, size: usize, phi: f64, d: f64) -> Result<f64> {
    Ok(RowKernel::new(family, size, d)?.scaled(phi))
}

/// A named, ordered list of sample coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub samples: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("axis needs at least one finite sample"));
        }
        Ok(Self { name: name.into(), samples })
    }

    /// `steps` evenly spaced samples from `lo` to `hi` inclusive.
    pub fn linspace(name: impl Into<String>, lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if steps == 0 || hi.is_nan() || lo.is_nan() || hi < lo {
            return Err(invalid(format!("bad axis range [{lo}, {hi}] with {steps} steps")));
        }
        if steps == 1 {
            return Self::new(name, vec![lo]);
        }
        let h = (hi - lo) / (steps - 1) as f64;
        Self::new(name, (0..steps).map(|i| lo + h * i as f64).collect())
    }

    /// Samples `lo, lo + step, …` up to `hi` (the step is adjusted to land on `hi`).
    pub fn stepped(name: impl Into<String>, lo: f64, hi: f64, step: f64) -> Result<Self> {
        if step.is_nan() || step <= 0.0 {
            return Err(invalid("axis step must be positive"));
        }
        let steps = ((hi - lo) / step).round() as usize + 1;
        Self::linspace(name, lo, hi, steps)
    }

    /// Integer samples `lo..=hi`.
    pub fn integers(name: impl Into<String>, lo: usize, hi: usize) -> Result<Self> {
        if hi < lo {
            return Err(invalid(format!("empty integer range [{lo}, {hi}]")));
        }
        Self::new(name, (lo..=hi).map(|v| v as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the sample equal to `value` within `1e-9` (relative to spacing).
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let tol = 1e-9 * self.samples.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        self.samples.iter().position(|s| (s - value).abs() <= tol)
    }
}

/// Grid of scaled slopes; `values[iy * nx + ix]`, x varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub x_axis: Axis,
    pub y_axis: Axis,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl RegionMap {
    pub fn new(x_axis: Axis, y_axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != x_axis.len() * y_axis.len() || values.is_empty() {
            return Err(invalid(format!(
                "map has {} values for a {}×{} grid",
                values.len(),
                x_axis.len(),
                y_axis.len()
            )));
        }
        let mask = values.iter().map(|&v| v > 0.0).collect();
        Ok(Self { x_axis, y_axis, values, mask })
    }

    pub fn nx(&self) -> usize {
        self.x_axis.len()
    }

    pub fn ny(&self) -> usize {
        self.y_axis.len()
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx() + ix]
    }

    pub fn superradiant(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.nx() + ix]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of superradiant cells.
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// 4-connected components of the superradiant mask, each as `(ix, iy)`
    /// cells in discovery order.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut seen = vec![false; nx * ny];
        let mut out = Vec::new();
        for start in 0..nx * ny {
            if !self.mask[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(idx) = queue.pop_front() {
                let (ix, iy) = (idx % nx, idx / nx);
                comp.push((ix, iy));
                let mut visit = |jx: usize, jy: usize| {
                    let j = jy * nx + jx;
                    if self.mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if ix > 0 {
                    visit(ix - 1, iy);
                }
                if ix + 1 < nx {
                    visit(ix + 1, iy);
                }
                if iy > 0 {
                    visit(ix, iy - 1);
                }
                if iy + 1 < ny {
                    visit(ix, iy + 1);
                }
            }
            out.push(comp);
        }
        out
    }

    /// Whether a superradiant component reaches the column at `x` with a cell
    /// whose y lies in `[y_lo, y_hi]`.
    pub fn region_present(&self, x: f64, y_lo: f64, y_hi: f64) -> Result<bool> {
        let ix = self
            .x_axis
            .index_of(x)
            .ok_or_else(|| invalid(format!("{} = {x} is not a sample of the map", self.x_axis.name)))?;
        Ok(self
            .components()
            .iter()
            .any(|comp| comp.iter().any(|&(cx, cy)| cx == ix && (y_lo..=y_hi).contains(&self.y_axis.samples[cy]))))
    }

    /// Whether any superradiant cell, in any column, has y in `[y_lo, y_hi]`.
    pub fn band_present(&self, y_lo: f64, y_hi: f64) -> bool {
        (0..self.ny())
            .filter(|&iy| (y_lo..=y_hi).contains(&self.y_axis.samples[iy]))
            .any(|iy| (0..self.nx()).any(|ix| self.superradiant(ix, iy)))
    }

    /// Largest y, over the whole map, of a superradiant cell in column `x`.
    pub fn largest_superradiant_y(&self, x: f64) -> Option<f64> {
        let ix = self.x_axis.index_of(x)?;
        (0..self.ny())
            .filter(|&iy| self.superradiant(ix, iy))
            .map(|iy| self.y_axis.samples[iy])
            .fold(None, |m: Option<f64>, y| Some(m.map_or(y, |m| m.max(y))))
    }
}

fn sizes_axis(sizes: &[usize]) -> Result<Axis> {
    if sizes.contains(&0) {
        return Err(invalid("sizes must be positive"));
    }
    Axis::new("N", sizes.iter().map(|&s| s as f64).collect())
}

/// Map over atom count (x) and spacing (y).
pub fn map_n_d(family: Family, kind: SlopeKind, sizes: &[usize], d_axis: &Axis) -> Result<RegionMap> {
    let x_axis = sizes_axis(sizes)?;
    let nx = sizes.len();
    let values = (0..nx * d_axis.len())
        .into_par_iter()
        .map(|idx| cell_n_d(family, kind, sizes[idx % nx], d_axis.samples[idx / nx]))
        .collect::<Result<Vec<f64>>>()?;
    RegionMap::new(x_axis, Axis { name: "d".into(), samples: d_axis.samples.clone() }, values)
}

/// Map over detection angle φ (x) and spacing (y) at fixed size.
pub fn map_phi_d(family: Family, size: usize, phi_axis: &Axis, d_axis: &Axis) -> Result<RegionMap> {
    let rows = d_axis
        .samples
        .par_iter()
        .map(|&d| {
            let kernel = RowKernel::new(family, size, d)?;
            Ok(phi_axis.samples.iter().map(|&phi| kernel.scaled(phi)).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    RegionMap::new(
        Axis { name: "phi".into(), samples: phi_axis.samples.clone() },
        Axis { name: "d".into(), samples: d_axis.samples.clone() },
        rows.concat(),
    )
}

/// Drives with excited fractions `hi, hi − 0.05, …` down to `lo`.
pub fn excited_fraction_drives(hi: f64, lo: f64, k_i_direction: crate::Vec3) -> Result<Vec<DriveSpec>> {
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(invalid(format!("excited fraction range [{lo}, {hi}] is not within [0, 1]")));
    }
    let steps = ((hi - lo) / EXCITED_FRACTION_STEP).round() as usize;
    (0..=steps)
        .map(|i| DriveSpec::from_excited_fraction((hi - i as f64 * EXCITED_FRACTION_STEP).max(0.0), k_i_direction))
        .collect()
}

/// One (φ, d) or single-column map per drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSweep {
    pub excited_fractions: Vec<f64>,
    pub maps: Vec<RegionMap>,
    pub areas: Vec<usize>,
    /// Superradiant area never grows as the excited fraction decreases.
    pub monotone: bool,
}

impl PartialSweep {
    /// Lowest excited fraction down to which a superradiant cell with `d` in
    /// the band survives without interruption from the most excited map.
    pub fn vanishing_fraction(&self, d_lo: f64, d_hi: f64) -> Option<f64> {
        let mut order: Vec<usize> = (0..self.maps.len()).collect();
        order.sort_by(|&a, &b| self.excited_fractions[b].total_cmp(&self.excited_fractions[a]));
        let mut last = None;
        for i in order {
            if !self.maps[i].band_present(d_lo, d_hi) {
                break;
            }
            last = Some(self.excited_fractions[i]);
        }
        last
    }
}

/// Directional (or total, when `phi_axis` is `None`) partially inverted slope
/// maps of a fixed-size geometry, one per drive.
pub fn partial_sweep(
    family: Family,
    size: usize,
    phi_axis: Option<&Axis>,
    d_axis: &Axis,
    drives: &[DriveSpec],
    opts: &PartialOptions,
) -> Result<PartialSweep> {
    if drives.is_empty() {
        return Err(invalid("partial sweep needs at least one drive"));
    }
    let x_axis = match phi_axis {
        Some(a) => Axis { name: "phi".into(), samples: a.samples.clone() },
        None => Axis { name: "total".into(), samples: vec![0.0] },
    };
    // rows[d][drive][phi]
    let rows = d_axis
        .samples
        .par_iter()
        .map(|&d| {
            let cloud = family.cloud(size, d)?;
            let c = build_coupling(&cloud)?;
            let n = cloud.len() as f64;
            drives
                .iter()
                .map(|drive| match phi_axis {
                    None => Ok(vec![gdot_total_partial(&c, &cloud, drive, opts)?.gdot0 / (n * GAMMA * GAMMA)]),
                    Some(a) => a
                        .samples
                        .iter()
                        .map(|&phi| {
                            let r = gdot_directional_partial(&c, &cloud, drive, in_plane_wavevector(phi), opts)?;
                            Ok(r.gdot0 / (n * GAMMA * GAMMA))
                        })
                        .collect::<Result<Vec<f64>>>(),
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
    let y_axis = Axis { name: "d".into(), samples: d_axis.samples.clone() };
    let maps = (0..drives.len())
        .map(|j| RegionMap::new(x_axis.clone(), y_axis.clone(), rows.iter().flat_map(|r| r[j].clone()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let excited_fractions: Vec<f64> = drives.iter().map(|d| d.excited_fraction()).collect();
    let areas: Vec<usize> = maps.iter().map(|m| m.area()).collect();
    let mut order: Vec<usize> = (0..drives.len()).collect();
    order.sort_by(|&a, &b| excited_fractions[b].total_cmp(&excited_fractions[a]));
    let monotone = order.windows(2).all(|w| areas[w[1]] <= areas[w[0]]);
    Ok(PartialSweep { excited_fractions, maps, areas, monotone })
}

/// Survival statistics of a probe region under random atom removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalStudy {
    pub p_values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Fraction of trials with a superradiant probe cell, per removal probability.
    pub survival: Vec<f64>,
    /// Kept-atom fraction `1 − p` where survival first falls below 50%,
    /// linearly interpolated between the bracketing `p` samples.
    pub threshold_kept: Option<f64>,
}

/// Seed of one removal trial. The same trial reuses its uniform draws for
/// every `p`, so removal sets are nested in `p`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed ^ (trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Thins the fully inverted geometry with each `p` and records how often a
/// probe cell (any `d` in `probe_d`) stays superradiant.
pub fn removal_study(
    family: Family,
    size: usize,
    kind: SlopeKind,
    probe_d: &[f64],
    p_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RemovalStudy> {
    if trials == 0 {
        return Err(invalid("removal study needs at least one trial"));
    }
    if probe_d.is_empty() || p_values.is_empty() {
        return Err(invalid("removal study needs probe spacings and removal probabilities"));
    }
    let kind = normalized(kind)?;
    let clouds = probe_d.iter().map(|&d| family.cloud(size, d)).collect::<Result<Vec<_>>>()?;
    let survival = p_values
        .iter()
        .map(|&p| {
            let hits = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let s = trial_seed(seed, t);
                    for cloud in &clouds {
                        let thinned = thin_cloud(cloud, p, s)?;
                        if !thinned.is_empty() && naive_scaled(&thinned, kind) > 0.0 {
                            return Ok(1usize);
                        }
                    }
                    Ok(0)
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(hits.iter().sum::<usize>() as f64 / trials as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let threshold_kept = survival_crossing(p_values, &survival).map(|p| 1.0 - p);
    Ok(RemovalStudy { p_values: p_values.to_vec(), trials, seed, survival, threshold_kept })
}

fn survival_crossing(p_values: &[f64], survival: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..p_values.len()).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let first = order[0];
    if survival[first] < SURVIVAL_CRITERION {
        return Some(p_values[first]);
    }
    order.windows(2).find(|w| survival[w[1]] < SURVIVAL_CRITERION).map(|w| {
        let (p0, p1) = (p_values[w[0]], p_values[w[1]]);
        let (s0, s1) = (survival[w[0]], survival[w[1]]);
        p0 + (p1 - p0) * (s0 - SURVIVAL_CRITERION) / (s0 - s1)
    })
}
