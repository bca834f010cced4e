use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand_chacha::ChaCha8Rng;
use sgir::render::{render, shade_point, RenderConfig};
use sgir::sampling::intersect_surface;
use sgir::sg::sg_product;
use sgir::{SamplingConfig, Vec3};
use sgir_bench::{front_camera, glossy, lights, two_objects};

fn bench_sg_product(c: &mut Criterion) {
    let l = lights(2);
    c.bench_function("sg_product", |b| b.iter(|| sg_product(black_box(&l[0]), black_box(&l[1]))));
}

fn bench_shade_point(c: &mut Criterion) {
    let n = Vec3::new(0.2, -0.9, 0.3).normalize();
    let wo = Vec3::new(0.0, -1.0, 0.2).normalize();
    let mat = glossy();
    let mut group = c.benchmark_group("shade_point");
    for lobes in [1, 16, 64] {
        let l = lights(lobes);
        group.bench_with_input(BenchmarkId::from_parameter(lobes), &l, |b, l| {
            b.iter(|| shade_point(black_box(n), black_box(wo), &mat, l).unwrap())
        });
    }
    group.finish();
}

fn bench_intersect(c: &mut Criterion) {
    let scene = two_objects(1);
    let cam = front_camera(64);
    let ray = cam.generate_ray(20, 32, (0.0, 0.0)).clip_to_sphere(1.5).unwrap();
    let cfg = SamplingConfig::default();
    c.bench_function("intersect_surface", |b| {
        b.iter(|| intersect_surface::<ChaCha8Rng>(&scene.geometry, black_box(&ray), &cfg, None))
    });
}

fn bench_render(c: &mut Criterion) {
    let scene = two_objects(16);
    let cam = front_camera(32);
    let cfg = RenderConfig::default();
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    group.bench_function("two_objects_32px_16_lobes", |b| b.iter(|| render(&scene, &cam, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_sg_product, bench_shade_point, bench_intersect, bench_render);
criterion_main!(benches);
