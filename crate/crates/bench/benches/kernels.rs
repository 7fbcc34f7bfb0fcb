use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use fluidrecon_bench::{desk_config, desk_networks, space_time, translating_sphere};
use fluidrecon_core::evaluation::chamfer;
use fluidrecon_core::extraction::{marching_cubes, marching_cubes_fn};
use fluidrecon_core::geometry::signed_distances;
use fluidrecon_core::kdtree::KdTree;
use fluidrecon_core::losses::{div_loss, ns_loss, total_loss, ResidualNorm};
use fluidrecon_core::siren::eval_with_jacobian;
use fluidrecon_core::trainer::{build_batch, initial_state};
use fluidrecon_core::{Aabb, Phase, Vec3};

fn siren(c: &mut Criterion) {
    let (f, v) = desk_networks();
    let x = [0.1, -0.2, 0.3, 0.5];
    c.bench_function("siren/jacobian_3x64_scalar", |b| b.iter(|| eval_with_jacobian(&f, black_box(&x))));
    c.bench_function("siren/jacobian_3x64_vector", |b| b.iter(|| eval_with_jacobian(&v, black_box(&x))));
}

fn losses(c: &mut Criterion) {
    let (_, v) = desk_networks();
    let samples = space_time(2048);
    c.bench_function("losses/div_2048", |b| b.iter(|| div_loss(&v, black_box(&samples), ResidualNorm::L1)));
    c.bench_function("losses/ns_2048", |b| b.iter(|| ns_loss(&v, black_box(&samples), ResidualNorm::L1)));
}

fn training_step(c: &mut Criterion) {
    let frames = translating_sphere(8, 5000);
    let cfg = desk_config(1);
    let state = initial_state(&frames, &cfg).unwrap();
    let weights = cfg.loss.weights();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, phase) in [("geometry", Phase::Geometry), ("velocity", Phase::Velocity), ("joint", Phase::Joint)] {
        group.bench_function(name, |b| {
            b.iter_batched(
                || build_batch(&frames, &cfg, phase, 0, 0).unwrap(),
                |batch| total_loss(phase, &state.f, &state.v, &batch, &weights, 0.5, cfg.loss.residual),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn geometry(c: &mut Criterion) {
    let frames = translating_sphere(2, 5000);
    let queries: Vec<Vec3> = space_time(2048).iter().map(|s| Vec3::new(s[0], s[1], s[2])).collect();
    c.bench_function("geometry/signed_distance_2048", |b| {
        b.iter(|| signed_distances(black_box(&queries), frames.frame(0)))
    });
    let cloud: Vec<Vec3> = space_time(100_000).iter().map(|s| Vec3::new(s[0], s[1], s[2])).collect();
    c.bench_function("kdtree/build_1e5", |b| b.iter(|| KdTree::new(black_box(&cloud))));
    c.bench_function("chamfer/1e4", |b| b.iter(|| chamfer(&cloud[..10_000], &cloud[50_000..60_000])));
}

fn extraction(c: &mut Criterion) {
    let bbox = Aabb::cube(1.5);
    c.bench_function("marching_cubes/sphere_64", |b| {
        b.iter(|| marching_cubes_fn(|p: &Vec3| p.norm() - 1.0, 64, &bbox))
    });
    let (f, _) = desk_networks();
    let mut group = c.benchmark_group("marching_cubes");
    group.sample_size(10);
    group.bench_function("network_3x64_res32", |b| b.iter(|| marching_cubes(&f, 0.5, 32, &Aabb::cube(1.0))));
    group.finish();
}

criterion_group!(benches, siren, losses, training_step, geometry, extraction);
criterion_main!(benches);
