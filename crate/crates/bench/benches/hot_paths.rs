use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use redress_core::evaluation::average_precision;
use redress_core::image_gan::{compose, ComposeMode, TextureChannels};
use redress_core::pipeline::{Pipeline, Seeds};
use redress_core::preprocess::constraint_from_segmap;
use redress_core::synth::synthesize;
use redress_core::training::{train_stage, Stage, TrainConfig};

fn bench_compose(c: &mut Criterion) {
    let record = synthesize(1, 0, 64).remove(0).1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = Array4::from_shape_fn((7, 64, 64, 3), |_| rng.random_range(-1.0f32..1.0));
    let channels = TextureChannels::new(data).unwrap();
    c.bench_function("compose_hard_64", |b| {
        b.iter(|| compose(black_box(&channels), &record.segmap, ComposeMode::Hard).unwrap())
    });
    c.bench_function("compose_soft_64", |b| {
        b.iter(|| compose(black_box(&channels), &record.segmap, ComposeMode::Soft).unwrap())
    });
}

fn bench_preprocess(c: &mut Criterion) {
    let record = synthesize(1, 0, 128).remove(0).1;
    c.bench_function("constraint_128", |b| b.iter(|| constraint_from_segmap(black_box(&record.segmap)).unwrap()));
}

fn bench_ap(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
    c.bench_function("average_precision_1000", |b| {
        b.iter(|| average_precision(black_box(&scores), &labels).unwrap())
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let records: Vec<_> = synthesize(4, 2, 32).into_iter().map(|(_, r)| r).collect();
    let train = |stage| {
        let cfg = TrainConfig {
            stage,
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train_stage(&cfg, &records).unwrap().checkpoint
    };
    let pipeline = Pipeline::new(train(Stage::Shape), train(Stage::Image)).unwrap();
    c.bench_function("infer_32", |b| {
        b.iter(|| pipeline.infer(black_box(&records[0]), &records[1].caption, Seeds::from_seed(0)).unwrap())
    });
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for stage in [Stage::Shape, Stage::Image] {
        let cfg = TrainConfig {
            stage,
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        group.bench_function(format!("epoch_4_records_{stage}"), |b| {
            b.iter(|| train_stage(black_box(&cfg), &records).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_compose, bench_preprocess, bench_ap, bench_pipeline);
criterion_main!(benches);
