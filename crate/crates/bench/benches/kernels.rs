use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use epnn_core::arch::{assemble_default, model_backward, model_forward, ArchKind};
use epnn_core::mech::PrincipalVec3;
use epnn_core::nn::{backward, forward, init_mlp, MlpSpec};
use epnn_core::recall::{simulate, Driver};
use epnn_core::{integrate_step, IntegratorTolerances, MaterialState, WgParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn integrator(c: &mut Criterion) {
    let params = WgParams::default();
    let tol = IntegratorTolerances::default();
    let virgin = MaterialState::isotropic(225.0, 0.62);
    let elastic = PrincipalVec3::splat(3e-4);
    let plastic = PrincipalVec3::new(-4e-4, -4e-4, 8e-4);
    c.bench_function("integrate_step/elastic", |b| {
        b.iter(|| integrate_step(black_box(&virgin), black_box(&elastic), &params, &tol).unwrap())
    });
    c.bench_function("integrate_step/plastic", |b| {
        b.iter(|| integrate_step(black_box(&virgin), black_box(&plastic), &params, &tol).unwrap())
    });
}

fn mlp(c: &mut Criterion) {
    let spec = MlpSpec::new(13, 3, 60, 3);
    let params = init_mlp(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = random_matrix(1024, 13, 1);
    c.bench_function("mlp/forward_1024", |b| b.iter(|| forward(&params, &spec, black_box(x.view())).unwrap()));
    let (y, cache) = forward(&params, &spec, x.view()).unwrap();
    c.bench_function("mlp/backward_1024", |b| {
        b.iter(|| backward(&params, &spec, &cache, black_box(y.view())).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let x = random_matrix(1024, 13, 2);
    let d_y = random_matrix(1024, 7, 3);
    for kind in ArchKind::ALL {
        let m = assemble_default(kind, 0).unwrap();
        c.bench_function(&format!("model/{kind}_forward_backward_1024"), |b| {
            b.iter(|| {
                let (_, cache) = model_forward(&m, black_box(x.view())).unwrap();
                model_backward(&m, &cache, d_y.view()).unwrap()
            })
        });
    }
}

fn recall(c: &mut Criterion) {
    let m = assemble_default(ArchKind::Epnn, 0).unwrap();
    let driver = Driver::undrained(8e-4, 70).unwrap();
    c.bench_function("recall/epnn_undrained_70", |b| b.iter(|| simulate(&m, &driver, 225.0, 0.62).unwrap()));
}

criterion_group!(benches, integrator, mlp, model, recall);
criterion_main!(benches);
