use criterion::{criterion_group, criterion_main, Criterion};
use helm_bench::{rng, ring};
use helm_core::attention::{hope, HopeConfig};
use helm_core::lorentz::{lift, sq_distance, Curvature};
use helm_core::ricci::{ollivier_ricci, CurvatureReport, NeighborGraph};
use rand::Rng;

fn lorentz_ops(c: &mut Criterion) {
    let k = Curvature::new(-1.0).unwrap();
    let mut r = rng(5);
    let s: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = lift(&s, k);
    let y = lift(&s.iter().rev().copied().collect::<Vec<_>>(), k);
    let cfg = HopeConfig::new(64, 10_000.0).unwrap();
    c.bench_function("sq_distance/64", |b| b.iter(|| sq_distance(&x, &y).unwrap()));
    c.bench_function("hope/64", |b| b.iter(|| hope(&x, 117, &cfg).unwrap()));
}

fn curvature(c: &mut Criterion) {
    let points = ring(200);
    let g = NeighborGraph::knn(&points, 6).unwrap();
    let (i, j) = g.edges()[0];
    c.bench_function("ollivier_ricci/edge", |b| b.iter(|| ollivier_ricci::<f64>(&g, i, j).unwrap()));
    c.bench_function("curvature_report/200x6", |b| {
        b.iter(|| CurvatureReport::from_points(&points, 6).unwrap())
    });
}

criterion_group!(benches, lorentz_ops, curvature);
criterion_main!(benches);
