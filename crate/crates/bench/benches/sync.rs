use angsync::autodiff::Tape;
use angsync::gnn::{projected_gradient, PgdConfig};
use angsync::graph::build_hermitian;
use angsync::losses::{cycle_loss_var, upset_loss_var};
use angsync::snl::{build_patches, synth_cloud, CloudShape};
use angsync::spectral::{spectral_sync, top_k_eigenvectors};
use angsync::synth::{gen_offset_graph, GroundTruthOption, MeasurementModel, SyntheticConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

fn config(n: usize, k: usize, eta: f64) -> SyntheticConfig {
    SyntheticConfig {
        model: MeasurementModel::ErdosRenyi,
        n,
        p: 0.15,
        k,
        eta,
        option: GroundTruthOption::Gamma,
        seed: 17,
    }
}

fn bench_generator(c: &mut Criterion) {
    c.bench_function("gen_er_n360", |b| {
        b.iter(|| gen_offset_graph(black_box(&config(360, 1, 0.3))).unwrap())
    });
}

fn bench_eigensolver(c: &mut Criterion) {
    let (g, _) = gen_offset_graph(&config(360, 1, 0.3)).unwrap();
    let h = build_hermitian(&g);
    c.bench_function("top1_eigenvector_n360", |b| {
        b.iter(|| top_k_eigenvectors(black_box(h.matrix()), 1, 1e-10, 5000).unwrap())
    });
    c.bench_function("spectral_sync_n360", |b| {
        b.iter(|| spectral_sync(black_box(&g), 1).unwrap())
    });
}

fn bench_losses(c: &mut Criterion) {
    let (g, gt) = gen_offset_graph(&config(360, 2, 0.3)).unwrap();
    let angles = gt.angles.as_array().clone().into_dyn();
    c.bench_function("upset_forward_backward_n360_k2", |b| {
        b.iter_batched(
            Tape::new,
            |tape| {
                let r = tape.param(angles.clone());
                let loss = upset_loss_var(&tape, &g, r).unwrap();
                tape.backward(loss).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("cycle_forward_backward_n360_k2", |b| {
        b.iter_batched(
            Tape::new,
            |tape| {
                let r = tape.param(angles.clone());
                let loss = cycle_loss_var(&tape, &g, r).unwrap();
                tape.backward(loss).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_pgd(c: &mut Criterion) {
    let (g, gt) = gen_offset_graph(&config(360, 1, 0.3)).unwrap();
    let h = build_hermitian(&g);
    c.bench_function("projected_gradient_5_steps_n360", |b| {
        b.iter(|| {
            projected_gradient(black_box(&gt.angles), h.matrix(), &PgdConfig::default()).unwrap()
        })
    });
}

fn bench_patches(c: &mut Criterion) {
    let cloud = synth_cloud(CloudShape::UniformSquare, 400, 3);
    c.bench_function("build_patches_n400_k50", |b| {
        b.iter(|| build_patches(black_box(&cloud), 50).unwrap())
    });
}

criterion_group!(
    benches,
    bench_generator,
    bench_eigensolver,
    bench_losses,
    bench_pgd,
    bench_patches
);
criterion_main!(benches);
