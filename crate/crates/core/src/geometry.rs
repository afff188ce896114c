//! Atom position sets: lines, double lines, square and cubic arrays, random
//! clouds, random thinning and the plain-text cloud file format.
//!
//! Every constructor defaults to a `ΔM = 0` transition with the dipole along
//! `ẑ`, which is the configuration used for all array examples.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::DipoleMode;
use crate::error::{invalid, Error, Result};
use crate::Vec3;

/// Seedable generator used for every Monte Carlo operation in the crate.
///
/// ChaCha8 is portable and its stream for a given seed is stable across
/// platforms and releases of `rand_chacha`.
pub type CloudRng = ChaCha8Rng;

pub(crate) const UNIT_TOL: f64 = 1e-12;

/// A fixed set of atoms sharing one dipole orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomCloud {
    positions: Vec<Vec3>,
    dipole: Vec3,
    mode: DipoleMode,
    pub label: String,
}

impl AtomCloud {
    /// Builds a cloud, rejecting a non-unit dipole and coincident atoms.
    pub fn new(positions: Vec<Vec3>, dipole: Vec3) -> Result<Self> {
        Self::with_mode(positions, dipole, DipoleMode::default())
    }

    pub fn with_mode(positions: Vec<Vec3>, dipole: Vec3, mode: DipoleMode) -> Result<Self> {
        check_unit(&dipole, "dipole")?;
        if let Some(p) = positions.iter().find(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(invalid(format!("non-finite position {p:?}")));
        }
        if let Some((i, j)) = find_coincident(&positions) {
            return Err(Error::SingularKernel(format!("atoms {i} and {j} coincide at {:?}", positions[i].as_slice())));
        }
        Ok(Self { positions, dipole, mode, label: String::new() })
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn dipole(&self) -> Vec3 {
        self.dipole
    }

    pub fn mode(&self) -> DipoleMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Rigid translation; every coupling and slope is invariant under it.
    pub fn translated(&self, shift: Vec3) -> Self {
        Self {
            positions: self.positions.iter().map(|p| p + shift).collect(),
            dipole: self.dipole,
            mode: self.mode,
            label: self.label.clone(),
        }
    }
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!("{what} must be a unit vector, |v| = {}", v.norm())));
    }
    Ok(())
}

/// Returns the first pair of exactly coincident positions, if any.
fn find_coincident(positions: &[Vec3]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    let key = |i: &usize| (positions[*i].x, positions[*i].y, positions[*i].z);
    order.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    order.windows(2).find(|w| positions[w[0]] == positions[w[1]]).map(|w| (w[0].min(w[1]), w[0].max(w[1])))
}

fn check_spacing(d: f64) -> Result<()> {
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid(format!("spacing must be positive, got {d}")));
    }
    Ok(())
}

/// `n` atoms on the y-axis at `0, d, 2d, …`.
pub fn line_lattice(n: usize, d: f64) -> Result<AtomCloud> {
    Ok(LatticeSpec::line(n, d)?.expand().labelled(format!("line n={n} d={d}")))
}

/// Two lines parallel to y separated by `d` in x. An odd total puts the extra
/// atom on the line at `x = 0`.
pub fn double_line_lattice(n_total: usize, d: f64) -> Result<AtomCloud> {
    double_line_lattice_with_gap(n_total, d, d)
}

/// Double line with an inter-line gap independent of the intra-line spacing.
pub fn double_line_lattice_with_gap(n_total: usize, d: f64, gap: f64) -> Result<AtomCloud> {
    check_spacing(d)?;
    check_spacing(gap)?;
    if n_total == 0 {
        return Err(invalid("double line needs at least one atom"));
    }
    let first = n_total.div_ceil(2);
    let positions = [(0.0, first), (gap, n_total - first)]
        .iter()
        .flat_map(|&(x, count)| (0..count).map(move |j| Vec3::new(x, j as f64 * d, 0.0)))
        .collect();
    Ok(AtomCloud::new(positions, Vec3::z())?.labelled(format!("double_line n={n_total} d={d} gap={gap}")))
}

/// `n1 × n1` array in the xy-plane.
pub fn square_lattice(n1: usize, d: f64) -> Result<AtomCloud> {
    Ok(LatticeSpec::square(n1, d)?.expand().labelled(format!("square n1={n1} d={d}")))
}

/// `n1 × n1 × n1` simple cubic array.
pub fn cubic_lattice(n1: usize, d: f64) -> Result<AtomCloud> {
    Ok(LatticeSpec::cubic(n1, d)?.expand().labelled(format!("cubic n1={n1} d={d}")))
}

/// `n` atoms drawn uniformly in a cube of side `side`, with every pair at least
/// `min_sep` apart (rejection sampling).
pub fn random_cloud(n: usize, side: f64, min_sep: f64, seed: u64) -> Result<AtomCloud> {
    check_spacing(side)?;
    let mut rng = CloudRng::seed_from_u64(seed);
    let mut positions: Vec<Vec3> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while positions.len() < n {
        attempts += 1;
        if attempts > 10_000 * (n + 1) {
            return Err(invalid(format!(
                "could not place {n} atoms with separation {min_sep} in a box of side {side}"
            )));
        }
        let p = Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * side;
        if positions.iter().all(|q| (p - q).norm() >= min_sep) {
            positions.push(p);
        }
    }
    Ok(AtomCloud::new(positions, Vec3::z())?.labelled(format!("random n={n} side={side} seed={seed}")))
}

/// Removes each atom independently with probability `p_remove`.
///
/// Exactly one uniform draw is consumed per atom, in position order, so two
/// clouds of equal size thinned with the same seed lose the same indices.
pub fn thin_cloud(cloud: &AtomCloud, p_remove: f64, seed: u64) -> Result<AtomCloud> {
    if !(0.0..=1.0).contains(&p_remove) {
        return Err(invalid(format!("removal probability must lie in [0, 1], got {p_remove}")));
    }
    let keep = keep_mask(cloud.len(), p_remove, seed);
    let positions = cloud.positions.iter().zip(&keep).filter_map(|(p, &k)| k.then_some(*p)).collect();
    Ok(AtomCloud {
        positions,
        dipole: cloud.dipole,
        mode: cloud.mode,
        label: format!("{} thinned p={p_remove} seed={seed}", cloud.label),
    })
}

pub(crate) fn keep_mask(n: usize, p_remove: f64, seed: u64) -> Vec<bool> {
    let mut rng = CloudRng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() >= p_remove).collect()
}

/// Bravais array: `n1` sites along each of the first `dim` lattice vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    dim: usize,
    vectors: [Vec3; 3],
    n1: usize,
    dipole: Vec3,
    mode: DipoleMode,
}

impl LatticeSpec {
    pub fn new(dim: usize, vectors: [Vec3; 3], n1: usize, dipole: Vec3) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(invalid(format!("lattice dimension must be 1, 2 or 3, got {dim}")));
        }
        if n1 == 0 {
            return Err(invalid("lattice needs at least one site per axis"));
        }
        check_unit(&dipole, "dipole")?;
        let [a1, a2, a3] = vectors;
        let scale = vectors[..dim].iter().map(|v| v.norm()).product::<f64>();
        let volume = match dim {
            1 => a1.norm(),
            2 => a1.cross(&a2).norm(),
            _ => a1.cross(&a2).dot(&a3).abs(),
        };
        if !(volume.is_finite() && scale > 0.0 && volume > 1e-12 * scale) {
            return Err(invalid("active lattice vectors are not linearly independent"));
        }
        Ok(Self { dim, vectors, n1, dipole, mode: DipoleMode::default() })
    }

    /// Line along y with spacing `d`.
    pub fn line(n: usize, d: f64) -> Result<Self> {
        check_spacing(d)?;
        Self::new(1, [Vec3::y() * d, Vec3::zeros(), Vec3::zeros()], n, Vec3::z())
    }

    /// Square array in the xy-plane.
    pub fn square(n1: usize, d: f64) -> Result<Self> {
        check_spacing(d)?;
        Self::new(2, [Vec3::x() * d, Vec3::y() * d, Vec3::zeros()], n1, Vec3::z())
    }

    pub fn cubic(n1: usize, d: f64) -> Result<Self> {
        check_spacing(d)?;
        Self::new(3, [Vec3::x() * d, Vec3::y() * d, Vec3::z() * d], n1, Vec3::z())
    }

    pub fn with_mode(mut self, mode: DipoleMode) -> Self {
        self.mode = mode;
        self
    }

    /// Same lattice vectors and dipole, different size.
    pub fn resized(&self, n1: usize) -> Result<Self> {
        if n1 == 0 {
            return Err(invalid("lattice needs at least one site per axis"));
        }
        Ok(Self { n1, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors[..self.dim]
    }

    pub fn dipole(&self) -> Vec3 {
        self.dipole
    }

    pub fn mode(&self) -> DipoleMode {
        self.mode
    }

    /// Total number of atoms, `n1^dim`.
    pub fn n_atoms(&self) -> usize {
        self.n1.pow(self.dim as u32)
    }

    /// Position of the displacement (or site) index `nu`.
    pub fn point(&self, nu: [i64; 3]) -> Vec3 {
        self.vectors[..self.dim].iter().zip(nu).fold(Vec3::zeros(), |acc, (a, k)| acc + a * k as f64)
    }

    /// Expands to explicit positions, first axis varying fastest.
    pub fn expand(&self) -> AtomCloud {
        let n = self.n1 as i64;
        let extent = |axis: usize| if axis < self.dim { n } else { 1 };
        let mut positions = Vec::with_capacity(self.n_atoms());
        for k in 0..extent(2) {
            for j in 0..extent(1) {
                for i in 0..extent(0) {
                    positions.push(self.point([i, j, k]));
                }
            }
        }
        // Linearly independent vectors never produce coincident sites.
        AtomCloud { positions, dipole: self.dipole, mode: self.mode, label: String::new() }
    }
}

/// Reads a cloud file: one `x y z` triple per line, `#` starts a comment.
///
/// A comment of the form `# dipole: dx dy dz` sets the dipole orientation,
/// otherwise it defaults to `ẑ`.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<AtomCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let mut positions = Vec::new();
    let mut dipole = Vec3::z();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("dipole:") {
                dipole = parse_triple(rest, lineno)?;
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        positions.push(parse_triple(trimmed, lineno)?);
    }
    let label = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AtomCloud::new(positions, dipole)?.labelled(label))
}

fn parse_triple(s: &str, line: usize) -> Result<Vec3> {
    let fields: Vec<&str> = s.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse { line, msg: format!("expected 3 numbers, found {}", fields.len()) });
    }
    let mut v = [0.0; 3];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse().map_err(|_| Error::Parse { line, msg: format!("not a number: {f:?}") })?;
    }
    Ok(Vec3::from(v))
}

/// Writes a cloud in the format read by [`load_cloud`], 17 significant digits.
pub fn save_cloud(cloud: &AtomCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# superrad cloud: {}", cloud.label)?;
    let d = cloud.dipole;
    writeln!(out, "# dipole: {:.16e} {:.16e} {:.16e}", d.x, d.y, d.z)?;
    for p in &cloud.positions {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}
