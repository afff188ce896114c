use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use superrad::coupling::build_coupling;
use superrad::criteria::{gdot_directional_inverted, gdot_total_partial, in_plane_wavevector};
use superrad::lattice_fast::{scaled_slope, standard_lattice};
use superrad::scan::naive_scaled;
use superrad::{DriveSpec, PartialOptions, SlopeKind, Vec3};

fn couplings(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_coupling");
    for n1 in [8usize, 16, 24] {
        let cloud = standard_lattice(2, n1, 0.5).unwrap().expand();
        g.bench_with_input(BenchmarkId::from_parameter(n1 * n1), &cloud, |b, cloud| {
            b.iter(|| build_coupling(black_box(cloud)).unwrap())
        });
    }
    g.finish();
}

fn fast_vs_naive(c: &mut Criterion) {
    let kind = SlopeKind::Directional(in_plane_wavevector(0.3));
    let mut g = c.benchmark_group("square_slope");
    for n1 in [10usize, 20, 40] {
        let spec = standard_lattice(2, n1, 0.8).unwrap();
        let cloud = spec.expand();
        g.bench_with_input(BenchmarkId::new("fast", n1), &spec, |b, spec| {
            b.iter(|| scaled_slope(black_box(spec), kind).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("naive", n1), &cloud, |b, cloud| {
            b.iter(|| naive_scaled(black_box(cloud), kind))
        });
    }
    g.finish();
}

fn dense_criteria(c: &mut Criterion) {
    let cloud = standard_lattice(1, 200, 0.55).unwrap().expand();
    let coupling = build_coupling(&cloud).unwrap();
    let drive = DriveSpec::new(2.0, Vec3::z()).unwrap();
    c.bench_function("directional_inverted_n200", |b| {
        b.iter(|| gdot_directional_inverted(&coupling, &cloud, in_plane_wavevector(0.4)).unwrap())
    });
    c.bench_function("total_partial_n200", |b| {
        b.iter(|| gdot_total_partial(&coupling, &cloud, &drive, &PartialOptions::default()).unwrap())
    });
}

criterion_group!(benches, couplings, fast_vs_naive, dense_criteria);
criterion_main!(benches);
