use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use superrad::coupling::build_coupling;
use superrad::criteria::{
    gddot_total_forms, gdot_directional_inverted, gdot_directional_partial, gdot_total_inverted, gdot_total_partial,
    in_plane_wavevector,
};
use superrad::geometry::random_cloud;
use superrad::lattice_fast::{gdot_total_fast, pair_count, scaled_slope, standard_lattice, weight};
use superrad::scan::{map_phi_d, Axis};
use superrad::{AtomCloud, DriveSpec, Family, PartialOptions, SlopeKind, Vec3};

fn cloud_strategy(max_n: usize) -> impl Strategy<Value = AtomCloud> {
    (1..=max_n, 0.2f64..3.0, any::<u64>()).prop_map(|(n, side, seed)| random_cloud(n, side, 1e-3, seed).unwrap())
}

fn direction() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decay_matrix_is_symmetric_and_positive(cloud in cloud_strategy(30)) {
        let c = build_coupling(&cloud).unwrap();
        let n = c.len();
        for i in 0..n {
            prop_assert_eq!(c.gamma[(i, i)], 1.0);
            for j in 0..n {
                prop_assert_eq!(c.gamma[(i, j)], c.gamma[(j, i)]);
                prop_assert!(c.gamma[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
        let eig = SymmetricEigen::new(c.gamma.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min > -1e-9 * n as f64, "min eigenvalue {}", min);
    }

    #[test]
    fn slopes_are_translation_invariant(cloud in cloud_strategy(20), shift in direction(), k in direction()) {
        let moved = cloud.translated(shift * 7.3);
        let (c0, c1) = (build_coupling(&cloud).unwrap(), build_coupling(&moved).unwrap());
        let a = gdot_total_inverted(&c0).unwrap().gdot0;
        let b = gdot_total_inverted(&c1).unwrap().gdot0;
        prop_assert!(close(a, b, 1e-12));
        let a = gdot_directional_inverted(&c0, &cloud, k).unwrap().gdot0;
        let b = gdot_directional_inverted(&c1, &moved, k).unwrap().gdot0;
        prop_assert!(close(a, b, 1e-10));
        let drive = DriveSpec::new(1.9, k).unwrap();
        let a = gdot_total_partial(&c0, &cloud, &drive, &PartialOptions::default()).unwrap().gdot0;
        let b = gdot_total_partial(&c1, &moved, &drive, &PartialOptions::default()).unwrap().gdot0;
        prop_assert!(close(a, b, 1e-9));
    }

    #[test]
    fn partial_at_full_inversion_is_inverted(cloud in cloud_strategy(50), ki in direction(), kf in direction()) {
        let c = build_coupling(&cloud).unwrap();
        let drive = DriveSpec::new(PI, ki).unwrap();
        let opts = PartialOptions::default();
        let p = gdot_total_partial(&c, &cloud, &drive, &opts).unwrap().gdot0;
        prop_assert!(close(p, gdot_total_inverted(&c).unwrap().gdot0, 1e-12));
        let p = gdot_directional_partial(&c, &cloud, &drive, kf, &opts).unwrap().gdot0;
        prop_assert!(close(p, gdot_directional_inverted(&c, &cloud, kf).unwrap().gdot0, 1e-12));
    }

    #[test]
    fn single_atom_directional_slope(k in direction(), p in direction()) {
        let cloud = AtomCloud::new(vec![p], Vec3::z()).unwrap();
        let c = build_coupling(&cloud).unwrap();
        prop_assert_eq!(gdot_directional_inverted(&c, &cloud, k).unwrap().gdot0, -1.0);
    }

    #[test]
    fn second_derivative_forms_agree(cloud in cloud_strategy(25)) {
        let c = build_coupling(&cloud).unwrap();
        let f = gddot_total_forms(&c).unwrap();
        prop_assert!(f.rel_diff() < 1e-12 || (f.trace_form - f.explicit_form).abs() < 1e-10 * c.len() as f64);
    }

    #[test]
    fn fast_matches_naive(dim in 1usize..=3, d in 0.1f64..2.5, size in 1usize..=40, k in direction()) {
        let n1 = match dim { 1 => size * 12, 2 => size, _ => 1 + size % 8 };
        let spec = standard_lattice(dim, n1, d).unwrap();
        let cloud = spec.expand();
        let c = build_coupling(&cloud).unwrap();
        prop_assert!(close(gdot_total_fast(&spec).scaled(), gdot_total_inverted(&c).unwrap().scaled(), 1e-12));
        let fast = scaled_slope(&spec, SlopeKind::Directional(k)).unwrap();
        let naive = gdot_directional_inverted(&c, &cloud, k).unwrap().scaled();
        prop_assert!(close(fast, naive, 1e-12));
    }

    #[test]
    fn weights_are_valid(dim in 1usize..=3, n1 in 1usize..=60, a in 0i64..60, b in 0i64..60, c in 0i64..60) {
        let nu = [a % n1 as i64, -(b % n1 as i64), c % n1 as i64];
        let w = weight(nu, n1, dim);
        prop_assert!((0.0..=1.0).contains(&w));
        let exact = pair_count(nu, n1, dim) as f64 / n1.pow(dim as u32) as f64;
        prop_assert!((w - exact).abs() < 1e-12);
    }

    #[test]
    fn line_map_reflection_symmetry(phi in 0.0f64..PI, d in 0.2f64..1.2) {
        let phis = Axis::new("phi", vec![phi, PI - phi, phi + PI]).unwrap();
        let ds = Axis::new("d", vec![d]).unwrap();
        let m = map_phi_d(Family::Line, 30, &phis, &ds).unwrap();
        prop_assert!(close(m.value(0, 0), m.value(1, 0), 1e-11));
        prop_assert!(close(m.value(0, 0), m.value(2, 0), 1e-11));
    }
}

#[test]
fn square_map_quarter_turn_at_forty() {
    let phis = Axis::new("phi", vec![0.13 * PI, 0.63 * PI]).unwrap();
    let ds = Axis::stepped("d", 0.4, 1.4, 0.1).unwrap();
    let m = map_phi_d(Family::Square, 40, &phis, &ds).unwrap();
    for iy in 0..m.ny() {
        assert!(close(m.value(0, iy), m.value(1, iy), 1e-10));
    }
}

#[test]
fn directional_dicke_pattern_on_tiny_arrays() {
    let cloud = standard_lattice(2, 3, 1e-4).unwrap().expand();
    let c = build_coupling(&cloud).unwrap();
    let r = gdot_directional_inverted(&c, &cloud, in_plane_wavevector(0.2)).unwrap();
    let n = 9.0;
    assert!((r.gdot0 - n * (n - 2.0)).abs() < 1e-4 * n * n);
}
