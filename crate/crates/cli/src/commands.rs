use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};
use superrad::coupling::build_coupling;
use superrad::criteria::{
    gddot_directional_inverted, gddot_total_inverted, gdot_directional_inverted, gdot_directional_partial,
    gdot_total_inverted, gdot_total_partial,
};
use superrad::export::{
    coupling_csv, write_cloud, write_region_csv, write_region_pgm, write_trajectory_csv, Provenance,
};
use superrad::geometry::{load_cloud, random_cloud, thin_cloud};
use superrad::lattice_fast::{
    default_fit_window, fit_asymptote, gdot_directional_fast, gdot_total_fast, limit_1d, standard_lattice, threshold_n1,
};
use superrad::me_oracle::{evolve, initial_state, second_derivative_check, slope_check, OracleOptions};
use superrad::scan::{map_n_d, map_phi_d, partial_sweep, removal_study, Axis};
use superrad::{AtomCloud, Error, LatticeSpec, SlopeKind};

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameter values; exit status 2.
    Usage(String),
    /// Numerical-consistency or I/O failure; exit status 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::TooLarge(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Provenance carrying every parsed flag, in key order.
fn provenance(command: &str, args: &impl Serialize, seed: Option<u64>) -> CliResult<Provenance> {
    let mut flat = Map::new();
    flatten_into(&mut flat, serde_json::to_value(args)?);
    let mut prov = Provenance::new(command);
    for (k, v) in flat {
        let text = match v {
            Value::String(s) => s,
            other => other.to_string(),
        };
        prov = prov.param(k, text);
    }
    if let Some(seed) = seed {
        prov = prov.with_seed(seed);
    }
    Ok(prov)
}

fn flatten_into(out: &mut Map<String, Value>, v: Value) {
    if let Value::Object(m) = v {
        for (k, v) in m {
            match v {
                Value::Object(_) => flatten_into(out, v),
                Value::Null => {}
                other => {
                    out.insert(k, other);
                }
            }
        }
    }
}

fn provenance_json(prov: &Provenance) -> Value {
    let params: Map<String, Value> = prov.params.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    json!({
        "tool": prov.tool,
        "version": prov.version,
        "command": prov.command,
        "params": params,
        "seed": prov.seed,
    })
}

/// Writes `record` plus a `provenance` field to `path`, or stdout.
fn emit(record: impl Serialize, prov: &Provenance, path: Option<&Path>) -> CliResult<()> {
    let mut value = serde_json::to_value(record)?;
    match value.as_object_mut() {
        Some(obj) => {
            obj.insert("provenance".into(), provenance_json(prov));
        }
        None => return Err(CliError::Failure("record is not a JSON object".into())),
    }
    let text = serde_json::to_string_pretty(&value)? + "\n";
    write_text(&text, path)
}

fn write_text(text: &str, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Failure(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn geometry(g: &GeometryArgs) -> CliResult<(AtomCloud, Option<LatticeSpec>)> {
    if let Some(path) = &g.cloud {
        return Ok((load_cloud(path)?, None));
    }
    let (Some(family), Some(n), Some(d)) = (g.family, g.n, g.d) else {
        return usage("--family needs --n and --d");
    };
    let lattice = family.lattice(n, d).transpose()?;
    Ok((family.cloud(n, d)?, lattice))
}

fn kind_name(kind: &SlopeKind) -> &'static str {
    match kind {
        SlopeKind::Total => "total",
        SlopeKind::Directional(_) => "directional",
    }
}

pub fn couple(a: &CoupleArgs) -> CliResult<()> {
    let prov = provenance("couple", a, None)?;
    let (cloud, _) = geometry(&a.geometry)?;
    let c = build_coupling(&cloud)?;
    write_text(&coupling_csv(&c, &prov), a.out.as_deref())
}

pub fn slope(a: &SlopeArgs) -> CliResult<()> {
    let prov = provenance("slope", a, None)?;
    let (cloud, lattice) = geometry(&a.geometry)?;
    let inverted = a.drive.inverted();
    let k_f = a.emission.k_f();
    if a.second && !inverted {
        return usage("--second requires --alpha pi");
    }
    let result = if a.fast {
        let Some(spec) = lattice else {
            return usage("--fast requires a line, square or cubic family");
        };
        if !inverted || a.second {
            return usage("--fast evaluates the fully inverted first derivative only");
        }
        match k_f {
            None => gdot_total_fast(&spec),
            Some(k) => gdot_directional_fast(&spec, k)?,
        }
    } else {
        let c = build_coupling(&cloud)?;
        match (k_f, inverted, a.second) {
            (None, true, true) => gddot_total_inverted(&c)?,
            (Some(k), true, true) => gddot_directional_inverted(&c, &cloud, k)?,
            (None, true, false) => gdot_total_inverted(&c)?,
            (Some(k), true, false) => gdot_directional_inverted(&c, &cloud, k)?,
            (None, false, _) => gdot_total_partial(&c, &cloud, &a.drive.drive()?, &a.variant.options())?,
            (Some(k), false, _) => gdot_directional_partial(&c, &cloud, &a.drive.drive()?, k, &a.variant.options())?,
        }
    };
    let scaled = result.scaled();
    let mut record = serde_json::to_value(&result)?;
    if let Some(obj) = record.as_object_mut() {
        obj.insert("kind".into(), json!(kind_name(&a.emission.slope_kind())));
        obj.insert("scaled_slope".into(), json!(scaled));
    }
    emit(record, &prov, a.json.as_deref())
}

pub fn map(a: &MapArgs) -> CliResult<()> {
    let prov = provenance("map", a, None)?;
    let inverted = (a.alpha - std::f64::consts::PI).abs() < 1e-12;
    if a.d_max < a.d_min || (a.axes == MapAxes::PhiD && a.phi_max < a.phi_min) {
        return usage("empty map: an axis range is reversed");
    }
    let d_axis = Axis::stepped("d", a.d_min, a.d_max, a.d_step)?;
    let map = match a.axes {
        MapAxes::ND => {
            if !inverted {
                return usage("partially inverted maps use --axes phi-d");
            }
            if a.n_step == 0 || a.n_min == 0 || a.n_max < a.n_min {
                return usage("empty map: need 1 ≤ --n-min ≤ --n-max and --n-step ≥ 1");
            }
            let sizes: Vec<usize> = (a.n_min..=a.n_max).step_by(a.n_step).collect();
            map_n_d(a.family, a.emission.slope_kind(), &sizes, &d_axis)?
        }
        MapAxes::PhiD => {
            let phi_axis = Axis::stepped("phi", a.phi_min, a.phi_max, a.phi_step)?;
            if inverted {
                map_phi_d(a.family, a.n, &phi_axis, &d_axis)?
            } else {
                let drive = superrad::DriveSpec::new(a.alpha, superrad::Vec3::z())?;
                let mut sweep = partial_sweep(a.family, a.n, Some(&phi_axis), &d_axis, &[drive], &a.variant.options())?;
                sweep.maps.remove(0)
            }
        }
    };
    if map.nx() == 0 || map.ny() == 0 {
        return usage("empty map");
    }
    if let Some(p) = &a.csv {
        write_region_csv(&map, &prov, p)?;
    }
    if let Some(p) = &a.pgm {
        write_region_pgm(&map, &prov, p)?;
    }
    let components = map.components();
    let record = json!({
        "family": a.family,
        "axes": a.axes,
        "nx": map.nx(),
        "ny": map.ny(),
        "area": map.area(),
        "components": components.len(),
        "largest_component": components.iter().map(Vec::len).max().unwrap_or(0),
    });
    emit(record, &prov, a.json.as_deref())
}

#[derive(Serialize)]
struct ThresholdRecord {
    dim: usize,
    d: f64,
    kind: &'static str,
    #[serde(rename = "C")]
    c: Option<f64>,
    #[serde(rename = "D")]
    d_coef: Option<f64>,
    rms: Option<f64>,
    n1_threshold: Option<usize>,
    slope_at_threshold: Option<f64>,
    largest_slope: f64,
    largest_at: usize,
    n1_searched: usize,
    extrapolated_threshold: Option<f64>,
}

pub fn threshold(a: &ThresholdArgs) -> CliResult<()> {
    let prov = provenance("threshold", a, None)?;
    let dim = a.dim as usize;
    let kind = a.emission.slope_kind();
    let spec = standard_lattice(dim, 1, a.d)?;
    let t = threshold_n1(&spec, kind, a.n1_max)?;
    // The asymptote is defined for the total rate of 2D and 3D arrays.
    let fit = match (kind, default_fit_window(dim)) {
        (SlopeKind::Total, Some((lo, hi))) => Some(fit_asymptote(dim, a.d, lo, hi)?),
        _ => None,
    };
    let record = ThresholdRecord {
        dim,
        d: a.d,
        kind: kind_name(&kind),
        c: fit.as_ref().map(|f| f.c),
        d_coef: fit.as_ref().map(|f| f.d_coef),
        rms: fit.as_ref().map(|f| f.rms),
        n1_threshold: t.n1_threshold,
        slope_at_threshold: t.slope_at_threshold,
        largest_slope: t.largest_slope,
        largest_at: t.largest_at,
        n1_searched: t.n1_searched,
        extrapolated_threshold: fit.as_ref().map(|f| f.extrapolated_threshold()),
    };
    emit(record, &prov, a.json.as_deref())
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let prov = provenance("fit", a, None)?;
    let dim = a.dim as usize;
    let Some((lo, hi)) = default_fit_window(dim) else {
        return usage("fit needs --dim 2 or 3");
    };
    let (lo, hi) = (a.n1_min.unwrap_or(lo), a.n1_max.unwrap_or(hi));
    let f = fit_asymptote(dim, a.d, lo, hi)?;
    // Computed onset inside the fit window, if any.
    let t = threshold_n1(&standard_lattice(dim, 1, a.d)?, SlopeKind::Total, hi)?;
    let mut record = serde_json::to_value(&f)?;
    if let Some(obj) = record.as_object_mut() {
        obj.insert("kind".into(), json!("total"));
        obj.insert("n1_threshold".into(), json!(t.n1_threshold));
        obj.insert("extrapolated_threshold".into(), json!(f.extrapolated_threshold()));
    }
    emit(record, &prov, a.json.as_deref())
}

pub fn thin(a: &ThinArgs) -> CliResult<()> {
    let prov = provenance("thin", a, Some(a.seed))?;
    if a.study {
        let (Some(family), Some(n), Some(lo), Some(hi)) =
            (a.geometry.family, a.geometry.n, a.probe_d_min, a.probe_d_max)
        else {
            return usage("--study needs --family, --n, --probe-d-min and --probe-d-max");
        };
        if hi < lo {
            return usage("empty probe band");
        }
        let probe = Axis::stepped("d", lo, hi, a.probe_d_step)?;
        let p_values = Axis::stepped("p", 0.0, a.p_max, a.p_step)?;
        let study =
            removal_study(family, n, a.emission.slope_kind(), &probe.samples, &p_values.samples, a.trials, a.seed)?;
        return emit(study, &prov, a.json.as_deref());
    }
    let Some(out) = &a.out else {
        return usage("thin needs --out (or --study)");
    };
    let (cloud, _) = geometry(&a.geometry)?;
    let thinned = thin_cloud(&cloud, a.p, a.seed)?;
    write_cloud(&thinned, &prov, out)?;
    let record = json!({ "n_before": cloud.len(), "n_after": thinned.len(), "out": out.display().to_string() });
    emit(record, &prov, a.json.as_deref())
}

pub fn oracle(a: &OracleArgs) -> CliResult<()> {
    let prov = provenance("oracle", a, Some(a.seed))?;
    let cloud = match (a.family, a.d) {
        (Some(family), Some(d)) => family.cloud(a.n, d)?,
        (Some(_), None) => return usage("--family needs --d"),
        _ => random_cloud(a.n, a.side, a.min_sep, a.seed)?,
    };
    let opts = OracleOptions { h: a.h, levels: a.levels, substeps: a.substeps };
    let k_f = a.emission.k_f();
    let check = if a.second {
        if !a.drive.inverted() {
            return usage("--second requires --alpha pi");
        }
        second_derivative_check(&cloud, k_f, &opts)?
    } else {
        slope_check(&cloud, &a.drive.drive()?, k_f, &a.variant.options(), &opts)?
    };
    if let Some(path) = &a.trajectory {
        let c = build_coupling(&cloud)?;
        let rho0 = initial_state(&cloud, &a.drive.drive()?)?;
        let traj = evolve(&rho0, &c, &cloud, k_f, a.t_end, a.dt, a.sample_every)?;
        write_trajectory_csv(&traj, &prov, path)?;
    }
    let passed = check.rel_diff <= a.tol;
    let mut record = serde_json::to_value(&check)?;
    if let Some(obj) = record.as_object_mut() {
        obj.insert("tolerance".into(), json!(a.tol));
        obj.insert("passed".into(), json!(passed));
    }
    emit(record, &prov, a.json.as_deref())?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Failure(format!("oracle disagreement {:e} exceeds {:e}", check.rel_diff, a.tol)))
    }
}

pub fn limit1d(a: &Limit1dArgs) -> CliResult<()> {
    let prov = provenance("limit1d", a, None)?;
    let kind = a.emission.slope_kind();
    let limit = limit_1d(a.d, kind, a.nu_max)?;
    let mut record = serde_json::to_value(&limit)?;
    if let Some(obj) = record.as_object_mut() {
        obj.insert("d".into(), json!(a.d));
        obj.insert("kind".into(), json!(kind_name(&kind)));
    }
    emit(record, &prov, a.json.as_deref())
}
