use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use symfeat::symmetry::{toy_gradient, ToyParams, ToyRotationTask};
use symfeat::{
    load_optdigits, prepare_splits, train, Dataset, FeatureMap, FeatureMapKind, Mlp, TrainConfig,
    DIGIT_ARCHITECTURE,
};

fn corpus() -> Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/optdigits.csv");
    load_optdigits(path).expect("vendored corpus").to_dataset("X")
}

fn network(c: &mut Criterion) {
    let model = Mlp::init(&DIGIT_ARCHITECTURE, true, 0).unwrap();
    let x: Vec<f64> = (0..64).map(|i| (i % 17) as f64 / 16.0).collect();
    c.bench_function("forward", |b| b.iter(|| model.logits(black_box(&x)).unwrap()));
    c.bench_function("backward", |b| b.iter(|| model.backward(black_box(&x), 3).unwrap()));
}

fn feature_maps(c: &mut Criterion) {
    let ds = corpus();
    let pixels = ds.images[0].pixels;
    for kind in [
        FeatureMapKind::Square,
        FeatureMapKind::NeighborProduct,
        FeatureMapKind::PermutationProduct { seed: 0 },
    ] {
        let map = FeatureMap::new(kind);
        c.bench_function(&format!("feature map {}", kind.short_name()), |b| {
            b.iter(|| map.apply(black_box(&pixels)))
        });
    }
}

fn training_epoch(c: &mut Criterion) {
    let splits = prepare_splits(&corpus(), 0.25, 0).unwrap();
    let data = splits.train.features(&FeatureMap::new(FeatureMapKind::Identity)).unwrap();
    let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one epoch", |b| {
        b.iter_batched(|| config.clone(), |cfg| train(&cfg, &data).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

fn toy(c: &mut Criterion) {
    let task = ToyRotationTask::closed(360, 0).unwrap();
    let p = ToyParams::from_array([0.8, -0.3, 0.5, 1.0, 0.0]);
    c.bench_function("toy gradient n=360", |b| b.iter(|| toy_gradient(&task, black_box(&p))));
}

criterion_group!(benches, network, feature_maps, training_epoch, toy);
criterion_main!(benches);
