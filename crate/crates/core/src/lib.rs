//! Early-time superradiance criteria for clouds and arrays of two-level atoms.
//!
//! The photon emission rate of an initially uncorrelated (product-state) atom
//! cloud is expanded in a Taylor series about `t = 0`. A cloud is called
//! superradiant when the rate increases at early times, `γ̇(0) > 0`, either
//! for emission into all angles or into a single detection direction.
//!
//! Units throughout: lengths are in transition wavelengths (λ = 1, so the
//! wavenumber is `k = 2π`) and rates are in units of the single-atom decay
//! rate (Γ = 1).
//!
//! Module map:
//!
//! - [`geometry`]: atom clouds, Bravais lattices, random thinning, cloud files.
//! - [`coupling`]: the free-space dipole kernel and the Γ/Ω matrices.
//! - [`criteria`]: `γ(0)`, `γ̇(0)`, `γ̈(0)` for total and directional emission.
//! - [`lattice_fast`]: O(N) displacement-weighted sums for Bravais arrays.
//! - [`me_oracle`]: brute-force Lindblad integration for small N.
//! - [`scan`]: region maps, partial-inversion sweeps and removal studies.
//! - [`export`]: CSV / PGM / cloud-file writers and readers.

pub mod coupling;
pub mod criteria;
mod error;
pub mod export;
pub mod geometry;
pub mod lattice_fast;
pub mod me_oracle;
pub mod scan;
pub mod special;

pub use coupling::{build_coupling, green_g, CouplingSet, DipoleMode, KernelConvention, MultilevelChannel};
pub use criteria::{DriveSpec, PartialOptions, PartialVariant, SlopeResult};
pub use error::{Error, Result};
pub use geometry::{AtomCloud, LatticeSpec};
pub use lattice_fast::SlopeKind;
pub use scan::{Family, RegionMap};

/// Transition wavenumber in units where λ = 1.
pub const K: f64 = std::f64::consts::TAU;

/// Single-atom decay rate; every rate in the crate is expressed in units of it.
pub const GAMMA: f64 = 1.0;

/// Three-vector in units of λ.
pub type Vec3 = nalgebra::Vector3<f64>;
