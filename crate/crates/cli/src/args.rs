//! Flag grammar. Angles are radians, or multiples of π with a `pi` suffix.

use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use superrad::criteria::spherical_wavevector;
use superrad::{DriveSpec, Family, PartialOptions, PartialVariant, SlopeKind, Vec3};

#[derive(Debug, Parser)]
#[command(name = "superrad", version, about = "Early-time superradiance criteria for atom arrays and clouds")]
#[command(after_help = "Lengths are in transition wavelengths, rates in single-atom decay rates.\n\
Angles are radians; a trailing `pi` multiplies by π (e.g. 0.4pi, -pi).\n\
Exit status: 0 success, 1 numerical or I/O failure, 2 usage error.")]
pub struct Cli {
    /// Worker threads for scans and lattice sums (default: all cores).
    #[arg(long, global = true, env = "SUPERRAD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the Γ_nm / Ω_nm coupling matrices as CSV.
    Couple(CoupleArgs),
    /// Early-time rate, slope and superradiance verdict of one geometry (JSON).
    Slope(SlopeArgs),
    /// Scaled-slope region map over (N, d) or (φ, d), as CSV / PGM.
    Map(MapArgs),
    /// Smallest array side N1 with a positive scaled slope.
    Threshold(ThresholdArgs),
    /// Large-N asymptote C + D·x of the total-rate scaled slope.
    Fit(FitArgs),
    /// Randomly remove atoms, or run a removal survival study.
    Thin(ThinArgs),
    /// Compare closed-form derivatives with master-equation integration (N ≤ 8).
    Oracle(OracleArgs),
    /// Infinite-line limit of the scaled slope.
    Limit1d(Limit1dArgs),
}

pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let v = match t.strip_suffix("pi") {
        Some(m) => {
            let m = m.trim_end_matches('*').trim();
            let factor = match m {
                "" | "+" => 1.0,
                "-" => -1.0,
                _ => m.parse::<f64>().map_err(|_| format!("bad angle '{s}'"))?,
            };
            factor * PI
        }
        None => t.parse::<f64>().map_err(|_| format!("bad angle '{s}'"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("angle '{s}' is not finite"))
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: superrad::Error| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got '{s}'")),
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a probability in [0, 1], got '{s}'")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GeometryArgs {
    /// Geometry family: line, double-line, square, cubic.
    #[arg(long, value_parser = parse_family, required_unless_present = "cloud")]
    pub family: Option<Family>,
    /// Atom count (line, double-line) or side length N1 (square, cubic).
    #[arg(long, requires = "family")]
    pub n: Option<usize>,
    /// Lattice spacing.
    #[arg(long, value_parser = parse_positive, requires = "family")]
    pub d: Option<f64>,
    /// Cloud file with one `x y z` per line instead of a family.
    #[arg(long, conflicts_with = "family")]
    pub cloud: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DriveArgs {
    /// Pulse area; π is full inversion.
    #[arg(long, value_parser = parse_angle, default_value = "pi")]
    pub alpha: f64,
    /// Polar angle of the drive wavevector.
    #[arg(long, value_parser = parse_angle, default_value = "0")]
    pub ki_theta: f64,
    /// Azimuth of the drive wavevector.
    #[arg(long, value_parser = parse_angle, default_value = "0")]
    pub ki_phi: f64,
}

impl DriveArgs {
    pub fn drive(&self) -> superrad::Result<DriveSpec> {
        DriveSpec::new(self.alpha, spherical_wavevector(self.ki_theta, self.ki_phi))
    }

    pub fn inverted(&self) -> bool {
        (self.alpha - PI).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Total,
    Directional,
}

#[derive(Debug, Args, Serialize)]
pub struct EmissionArgs {
    /// Emission into all angles or into the direction (theta, phi).
    #[arg(long, value_enum, default_value = "total")]
    pub kind: KindArg,
    /// Polar angle of the detection direction, from the dipole axis ẑ.
    #[arg(long, value_parser = parse_angle, default_value = "0.5pi")]
    pub theta: f64,
    /// Azimuth of the detection direction.
    #[arg(long, value_parser = parse_angle, default_value = "0")]
    pub phi: f64,
}

impl EmissionArgs {
    pub fn k_f(&self) -> Option<Vec3> {
        match self.kind {
            KindArg::Total => None,
            KindArg::Directional => Some(spherical_wavevector(self.theta, self.phi)),
        }
    }

    pub fn slope_kind(&self) -> SlopeKind {
        match self.k_f() {
            None => SlopeKind::Total,
            Some(k) => SlopeKind::Directional(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    Verified,
    AsPrinted,
}

impl VariantArg {
    pub fn options(self) -> PartialOptions {
        let variant = match self {
            VariantArg::Verified => PartialVariant::Verified,
            VariantArg::AsPrinted => PartialVariant::AsPrinted,
        };
        PartialOptions { variant, ..PartialOptions::default() }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CoupleArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Output CSV (stdout if omitted).
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SlopeArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    #[command(flatten)]
    pub emission: EmissionArgs,
    /// Reading of the partially inverted expressions.
    #[arg(long, value_enum, default_value = "verified")]
    pub variant: VariantArg,
    /// Also evaluate the second derivative (full inversion only).
    #[arg(long)]
    pub second: bool,
    /// Use the O(N) displacement sum (Bravais families, full inversion).
    #[arg(long)]
    pub fast: bool,
    /// Output JSON file (stdout if omitted).
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapAxes {
    /// x = size, y = d, fixed emission kind.
    #[value(name = "n-d")]
    ND,
    /// x = detection azimuth φ (in-plane), y = d, fixed size.
    #[value(name = "phi-d")]
    PhiD,
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long, value_enum, default_value = "phi-d")]
    pub axes: MapAxes,
    /// Size for phi-d maps.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 100)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1)]
    pub n_step: usize,
    #[arg(long, value_parser = parse_positive, default_value = "0.05")]
    pub d_min: f64,
    #[arg(long, value_parser = parse_positive, default_value = "1.5")]
    pub d_max: f64,
    #[arg(long, value_parser = parse_positive, default_value = "0.005")]
    pub d_step: f64,
    #[arg(long, value_parser = parse_angle, default_value = "0")]
    pub phi_min: f64,
    #[arg(long, value_parser = parse_angle, default_value = "pi")]
    pub phi_max: f64,
    #[arg(long, value_parser = parse_angle, default_value = "0.005pi")]
    pub phi_step: f64,
    /// Emission direction for n-d maps.
    #[command(flatten)]
    pub emission: EmissionArgs,
    /// Pulse area for a partially inverted phi-d map.
    #[arg(long, value_parser = parse_angle, default_value = "pi")]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "verified")]
    pub variant: VariantArg,
    #[serde(skip)]
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Summary JSON file (stdout if omitted).
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ThresholdArgs {
    /// Array dimension: 1 (line), 2 (square), 3 (cubic).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub dim: u8,
    #[arg(long, value_parser = parse_positive)]
    pub d: f64,
    #[command(flatten)]
    pub emission: EmissionArgs,
    /// Search horizon for N1.
    #[arg(long, default_value_t = 4096)]
    pub n1_max: usize,
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dim: u8,
    #[arg(long, value_parser = parse_positive)]
    pub d: f64,
    /// Fit window start (default 50 in 2D, 6 in 3D).
    #[arg(long)]
    pub n1_min: Option<usize>,
    /// Fit window end (default 400 in 2D, 60 in 3D).
    #[arg(long)]
    pub n1_max: Option<usize>,
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ThinArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Removal probability per atom.
    #[arg(long, value_parser = parse_probability, default_value = "0.2")]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Thinned cloud file (stdout if omitted).
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run a survival study over removal probabilities instead.
    #[arg(long, requires_all = ["family", "n", "probe_d_min", "probe_d_max"])]
    pub study: bool,
    #[command(flatten)]
    pub emission: EmissionArgs,
    #[arg(long, value_parser = parse_positive)]
    pub probe_d_min: Option<f64>,
    #[arg(long, value_parser = parse_positive)]
    pub probe_d_max: Option<f64>,
    #[arg(long, value_parser = parse_positive, default_value = "0.005")]
    pub probe_d_step: f64,
    #[arg(long, value_parser = parse_probability, default_value = "0.8")]
    pub p_max: f64,
    #[arg(long, value_parser = parse_positive, default_value = "0.05")]
    pub p_step: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    /// Atom count (random cloud, or the family size).
    #[arg(long)]
    pub n: usize,
    /// Lay the atoms out as a family instead of a random cloud.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    #[arg(long, value_parser = parse_positive, requires = "family")]
    pub d: Option<f64>,
    /// Side of the random-cloud box.
    #[arg(long, value_parser = parse_positive, default_value = "1.0")]
    pub side: f64,
    /// Minimum pair separation in the random cloud.
    #[arg(long, value_parser = parse_positive, default_value = "0.05")]
    pub min_sep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub drive: DriveArgs,
    #[command(flatten)]
    pub emission: EmissionArgs,
    #[arg(long, value_enum, default_value = "verified")]
    pub variant: VariantArg,
    /// Check the second derivative instead (full inversion only).
    #[arg(long)]
    pub second: bool,
    /// Largest accepted relative difference.
    #[arg(long, value_parser = parse_positive, default_value = "1e-4")]
    pub tol: f64,
    #[arg(long, value_parser = parse_positive, default_value = "0.02")]
    pub h: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 5)]
    pub substeps: usize,
    /// Also write a sampled trajectory CSV.
    #[serde(skip)]
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long, value_parser = parse_positive, default_value = "1.0")]
    pub t_end: f64,
    #[arg(long, value_parser = parse_positive, default_value = "0.001")]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub sample_every: usize,
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Limit1dArgs {
    #[arg(long, value_parser = parse_positive)]
    pub d: f64,
    #[command(flatten)]
    pub emission: EmissionArgs,
    /// Truncation of the displacement sum.
    #[arg(long, default_value_t = 100_000)]
    pub nu_max: usize,
    #[serde(skip)]
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("0.4pi").unwrap(), 0.4 * PI);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("-pi").unwrap(), -PI);
        assert_eq!(parse_angle("0.5*pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_angle("1.2566").unwrap(), 1.2566);
        assert!(parse_angle("x").is_err());
        assert!(parse_angle("inf").is_err());
        assert!(parse_angle("2pix").is_err());
    }

    #[test]
    fn grammar_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn one_subcommand_required() {
        assert!(Cli::try_parse_from(["superrad"]).is_err());
        assert!(Cli::try_parse_from(["superrad", "limit1d", "--d", "0.3"]).is_ok());
        assert!(Cli::try_parse_from(["superrad", "limit1d", "--d", "-1"]).is_err());
        assert!(Cli::try_parse_from(["superrad", "slope", "--family", "line", "--cloud", "x"]).is_err());
    }
}
