//! Hot kernels on a one-thread pool against the default pool. Built without
//! the `parallel` feature both run the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshboost::inpaint::{partial_conv_forward, PartialConvLayer};
use meshboost::mesh::body::{body_texture, generate_synthetic_body, BodyParams, BodyResolution};
use meshboost::nn::ops::conv2d_forward;
use meshboost::nn::{Activation, Tensor};
use meshboost::spatial::PointIndex;
use meshboost::texture::{transfer_texture, TransferConfig};
use meshboost::{TexturedMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("1-thread", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()
}

fn knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let index = PointIndex::build(&points(&mut rng, 8192)).unwrap();
    let queries = points(&mut rng, 8192);
    let mut g = c.benchmark_group("nearest_8192x8192");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pool.install(|| index.nearest_many(&queries))));
    }
    g.finish();
}

fn ray_cast(c: &mut Criterion) {
    let res = BodyResolution::default();
    let body = generate_synthetic_body(&BodyParams::default()).unwrap();
    let source = TexturedMesh::new(body.clone(), body_texture(res, 256, 256, 1).unwrap()).unwrap();
    let target = body.compute_vertex_normals().unwrap();
    let cfg = TransferConfig {
        width: 256,
        height: 256,
        ..TransferConfig::default()
    };
    let mut g = c.benchmark_group("transfer_256");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pool.install(|| transfer_texture(&source, &target, &cfg).unwrap())));
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::randn(&[16, 64, 64], 1.0, &mut rng);
    let w = Tensor::<f32>::randn(&[32, 16, 3, 3], 0.1, &mut rng);
    let b = Tensor::<f32>::zeros(&[32]);
    let layer = PartialConvLayer::from_parts(w.clone(), b.clone(), 1, Activation::Relu).unwrap();
    let m = Tensor::new(&[16, 64, 64], (0..16 * 64 * 64).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect()).unwrap();
    let mb = Tensor::new(&[64, 64], (0..64 * 64).map(|_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }).collect()).unwrap();

    let mut g = c.benchmark_group("conv_16to32_64x64");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| bch.iter(|| pool.install(|| conv2d_forward(&x, &w, &b, 1, 1).unwrap())));
    }
    g.finish();
    let mut g = c.benchmark_group("pconv_16to32_64x64");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| bch.iter(|| pool.install(|| partial_conv_forward(&x, &m, &mb, &layer).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, knn, ray_cast, conv);
criterion_main!(benches);
