use std::f64::consts::PI;

use superrad::coupling::build_coupling;
use superrad::criteria::{gdot_directional_inverted, gdot_total_inverted, in_plane_wavevector, spherical_wavevector};
use superrad::export::{
    read_numeric_csv, read_region_csv, write_coupling_csv, write_region_csv, write_region_pgm, write_trajectory_csv,
    Provenance,
};
use superrad::geometry::{double_line_lattice, line_lattice, load_cloud, save_cloud, thin_cloud};
use superrad::me_oracle::{evolve, initial_state};
use superrad::scan::{excited_fraction_drives, map_n_d, map_phi_d, partial_sweep, Axis};
use superrad::{DriveSpec, Family, PartialOptions, SlopeKind, Vec3};

#[test]
fn cloud_file_to_slope() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.txt");
    let cloud = double_line_lattice(10, 0.37).unwrap();
    save_cloud(&cloud, &path).unwrap();
    let back = load_cloud(&path).unwrap();
    let (a, b) = (build_coupling(&cloud).unwrap(), build_coupling(&back).unwrap());
    assert_eq!(gdot_total_inverted(&a).unwrap(), gdot_total_inverted(&b).unwrap());
    let k = spherical_wavevector(1.0, 0.3);
    assert_eq!(
        gdot_directional_inverted(&a, &cloud, k).unwrap().gdot0,
        gdot_directional_inverted(&b, &back, k).unwrap().gdot0
    );
}

#[test]
fn region_map_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = Axis::stepped("d", 0.4, 0.7, 0.05).unwrap();
    let kind = SlopeKind::Directional(in_plane_wavevector(0.4 * PI));
    let map = map_n_d(Family::Line, kind, &[6, 9, 12], &d).unwrap();
    let prov = Provenance::new("map").param("family", "line").param("phi", 0.4 * PI);
    let csv = dir.path().join("m.csv");
    write_region_csv(&map, &prov, &csv).unwrap();
    let back = read_region_csv(&csv).unwrap();
    assert_eq!(back.mask(), map.mask());
    for (x, y) in back.values().iter().zip(map.values()) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300));
    }
    let pgm = dir.path().join("m.pgm");
    write_region_pgm(&map, &prov, &pgm).unwrap();
    let text = std::fs::read_to_string(&pgm).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "P2");
    assert_eq!(body[1], format!("{} {}", map.nx(), map.ny()));
    assert_eq!(body.len(), 3 + map.ny());
    // identical inputs give identical bytes
    write_region_pgm(&map, &prov, dir.path().join("m2.pgm")).unwrap();
    assert_eq!(text, std::fs::read_to_string(dir.path().join("m2.pgm")).unwrap());
}

#[test]
fn coupling_and_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = line_lattice(3, 0.3).unwrap();
    let c = build_coupling(&cloud).unwrap();
    let path = dir.path().join("c.csv");
    write_coupling_csv(&c, &Provenance::new("couple"), &path).unwrap();
    let rows = read_numeric_csv(&path).unwrap();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let (n, m) = (row[0] as usize, row[1] as usize);
        assert_eq!(row[2], c.gamma[(n, m)]);
        assert_eq!(row[3], c.omega[(n, m)]);
    }

    let rho = initial_state(&cloud, &DriveSpec::inverted()).unwrap();
    let traj = evolve(&rho, &c, &cloud, Some(Vec3::x()), 1.0, 1e-3, 50).unwrap();
    let path = dir.path().join("t.csv");
    write_trajectory_csv(&traj, &Provenance::new("oracle"), &path).unwrap();
    let rows = read_numeric_csv(&path).unwrap();
    assert_eq!(rows.len(), traj.t.len());
    assert_eq!(rows[0], vec![0.0, 3.0, 3.0]);
    assert!(traj.gamma_total.iter().all(|g| *g >= 0.0));
}

#[test]
fn thinning_keeps_a_subset() {
    let cloud = line_lattice(200, 0.5).unwrap();
    let thin = thin_cloud(&cloud, 0.3, 4).unwrap();
    assert!(thin.len() < cloud.len());
    assert!(thin.positions().iter().all(|p| cloud.positions().contains(p)));
}

#[test]
fn partial_sweep_shrinks_double_line_regions() {
    let drives = excited_fraction_drives(1.0, 0.5, Vec3::z()).unwrap();
    let col = Axis::new("phi", vec![0.5 * PI]).unwrap();
    let near_lambda = Axis::stepped("d", 0.95, 1.1, 0.005).unwrap();
    let sweep =
        partial_sweep(Family::DoubleLine, 100, Some(&col), &near_lambda, &drives, &PartialOptions::default()).unwrap();
    let f = sweep.vanishing_fraction(0.95, 1.1).unwrap();
    assert!((f - 0.80).abs() < 0.05 + 1e-12, "{f}");
    assert!(sweep.monotone);
}

#[test]
fn phi_map_matches_n_map_column() {
    let d = Axis::stepped("d", 0.45, 0.6, 0.05).unwrap();
    let phi = Axis::new("phi", vec![0.4 * PI]).unwrap();
    let a = map_phi_d(Family::DoubleLine, 14, &phi, &d).unwrap();
    let kind = SlopeKind::Directional(in_plane_wavevector(0.4 * PI));
    let b = map_n_d(Family::DoubleLine, kind, &[14], &d).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert_eq!(x, y);
    }
}
