//! Text artifacts: region maps as CSV and PGM, coupling matrices and
//! trajectories as CSV. Every file starts with `#` provenance comments.
//!
//! Floating-point fields use 17 significant digits so values round-trip.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingSet;
use crate::error::{invalid, Error, Result};
use crate::geometry::AtomCloud;
use crate::me_oracle::Trajectory;
use crate::scan::{Axis, RegionMap};

pub const PGM_WHITE: u8 = 255;
pub const PGM_GRAY: u8 = 128;

/// Where an artifact came from: the command and its full parameter set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            tool: "superrad".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params: Vec::new(),
            seed: None,
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `# key: value` lines.
    pub fn header(&self) -> String {
        let mut s = format!("# tool: {} {}\n# command: {}\n", self.tool, self.version, self.command);
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k}: {v}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed: {seed}");
        }
        s
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn check_map(map: &RegionMap) -> Result<()> {
    if map.nx() == 0 || map.ny() == 0 {
        return Err(invalid("cannot export an empty map"));
    }
    Ok(())
}

pub fn region_csv(map: &RegionMap, prov: &Provenance) -> Result<String> {
    check_map(map)?;
    let mut s = prov.header();
    let _ = writeln!(s, "# axes: {} {}", map.x_axis.name, map.y_axis.name);
    s.push_str("x,y,value,mask\n");
    for iy in 0..map.ny() {
        for ix in 0..map.nx() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt_f64(map.x_axis.samples[ix]),
                fmt_f64(map.y_axis.samples[iy]),
                fmt_f64(map.value(ix, iy)),
                u8::from(map.superradiant(ix, iy))
            );
        }
    }
    Ok(s)
}

pub fn write_region_csv(map: &RegionMap, prov: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &region_csv(map, prov)?)
}

/// Parses a region CSV written by [`region_csv`] (x varying fastest).
pub fn parse_region_csv(text: &str) -> Result<RegionMap> {
    let mut names = ("x".to_string(), "y".to_string());
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# axes:") {
            let mut it = rest.split_whitespace();
            if let (Some(x), Some(y)) = (it.next(), it.next()) {
                names = (x.to_string(), y.to_string());
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "x,y,value,mask" {
                return Err(Error::Parse { line: line_no, msg: format!("expected CSV header, got '{line}'") });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 4 fields, got {}", fields.len()) });
        }
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse { line: line_no, msg: format!("bad number '{s}': {e}") })
        };
        let (x, y, v) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        let mask = match fields[3].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse { line: line_no, msg: format!("bad mask '{other}'") }),
        };
        if mask != (v > 0.0) {
            return Err(Error::Parse { line: line_no, msg: "mask disagrees with value sign".into() });
        }
        rows.push((x, y, v));
    }
    if rows.is_empty() {
        return Err(invalid("region CSV has no data rows"));
    }
    let nx = rows.iter().position(|r| r.1 != rows[0].1).unwrap_or(rows.len());
    if !rows.len().is_multiple_of(nx) {
        return Err(invalid("region CSV rows do not form a full grid"));
    }
    let xs: Vec<f64> = rows[..nx].iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().step_by(nx).map(|r| r.1).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.0 != xs[i % nx] || r.1 != ys[i / nx] {
            return Err(invalid(format!("region CSV row {} breaks the grid layout", i + 1)));
        }
    }
    RegionMap::new(Axis::new(names.0, xs)?, Axis::new(names.1, ys)?, rows.iter().map(|r| r.2).collect())
}

pub fn read_region_csv(path: impl AsRef<Path>) -> Result<RegionMap> {
    parse_region_csv(&fs::read_to_string(path)?)
}

/// ASCII PGM (P2): white for superradiant cells, gray otherwise; one image
/// row per y sample with y increasing downward.
pub fn region_pgm(map: &RegionMap, prov: &Provenance) -> Result<String> {
    check_map(map)?;
    let mut s = String::from("P2\n");
    s.push_str(&prov.header());
    let _ = writeln!(s, "# x: {} y: {}", map.x_axis.name, map.y_axis.name);
    let _ = writeln!(s, "{} {}\n255", map.nx(), map.ny());
    for iy in 0..map.ny() {
        let row: Vec<String> =
            (0..map.nx()).map(|ix| if map.superradiant(ix, iy) { PGM_WHITE } else { PGM_GRAY }.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_region_pgm(map: &RegionMap, prov: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &region_pgm(map, prov)?)
}

/// All ordered pairs `n,m,Gamma,Omega`, diagonal included.
pub fn coupling_csv(c: &CouplingSet, prov: &Provenance) -> String {
    let mut s = prov.header();
    s.push_str("n,m,Gamma,Omega\n");
    for n in 0..c.len() {
        for m in 0..c.len() {
            let _ = writeln!(s, "{n},{m},{},{}", fmt_f64(c.gamma[(n, m)]), fmt_f64(c.omega[(n, m)]));
        }
    }
    s
}

pub fn write_coupling_csv(c: &CouplingSet, prov: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &coupling_csv(c, prov))
}

/// `t,gamma_total,gamma_dir`; the last column is empty without a detection direction.
pub fn trajectory_csv(traj: &Trajectory, prov: &Provenance) -> String {
    let mut s = prov.header();
    s.push_str("t,gamma_total,gamma_dir\n");
    for (i, (t, g)) in traj.t.iter().zip(&traj.gamma_total).enumerate() {
        let dir = traj.gamma_dir.as_ref().map(|d| fmt_f64(d[i])).unwrap_or_default();
        let _ = writeln!(s, "{},{},{dir}", fmt_f64(*t), fmt_f64(*g));
    }
    s
}

pub fn write_trajectory_csv(traj: &Trajectory, prov: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &trajectory_csv(traj, prov))
}

/// Cloud file readable by [`crate::geometry::load_cloud`], with provenance comments.
pub fn cloud_text(cloud: &AtomCloud, prov: &Provenance) -> String {
    let mut s = prov.header();
    let d = cloud.dipole();
    let _ = writeln!(s, "# dipole: {} {} {}", fmt_f64(d.x), fmt_f64(d.y), fmt_f64(d.z));
    for p in cloud.positions() {
        let _ = writeln!(s, "{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
    }
    s
}

pub fn write_cloud(cloud: &AtomCloud, prov: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &cloud_text(cloud, prov))
}

/// Reads the numeric rows of any of the CSV formats above, skipping comments
/// and the header line.
pub fn read_numeric_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let row = line
            .split(',')
            .map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>() })
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(row);
    }
    Ok(out)
}
