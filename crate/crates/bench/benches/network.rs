use criterion::{criterion_group, criterion_main, Criterion};
use forgeloc::data::{stack, AugmentConfig};
use forgeloc::metrics::{auc_scores, evaluate, Aggregation};
use forgeloc::network::{Model, NetworkConfig, Variant};
use forgeloc::training::{AdamConfig, LossConfig, TrainRun, Trainer};
use forgeloc_bench::{samples, scored_labels};
use std::hint::black_box;

const SIZE: usize = 64;
const BATCH: usize = 4;

fn forward(c: &mut Criterion) {
    let data = samples(BATCH, SIZE);
    let refs: Vec<_> = data.iter().collect();
    let (images, _) = stack::<f32>(&refs).unwrap();
    let mut group = c.benchmark_group("predict_desk_64");
    for (name, variant) in [("late_fusion", Variant::TwoStreamLateFusion), ("nsed_only", Variant::NsedOnly)] {
        let model = Model::<f32>::build(&NetworkConfig::desk(SIZE).with_variant(variant), 0).unwrap();
        group.bench_function(name, |b| b.iter(|| black_box(model.predict(&images).unwrap())));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let data = samples(BATCH, SIZE);
    let refs: Vec<_> = data.iter().collect();
    let model = Model::<f32>::build(&NetworkConfig::desk(SIZE), 0).unwrap();
    let run = TrainRun { batch_size: BATCH, ..TrainRun::default() };
    let no_aug = AugmentConfig { enabled: false, ..AugmentConfig::default() };
    let mut trainer = Trainer::new(model, LossConfig::dice(), AdamConfig::default(), run, no_aug, [1.0, 1.0]).unwrap();
    c.bench_function("train_step_desk_64_batch4", |b| b.iter(|| black_box(trainer.step(&refs).unwrap())));
}

fn metrics(c: &mut Criterion) {
    let (scores, labels) = scored_labels(SIZE * SIZE * 16, 9);
    c.bench_function("auc_65536_pixels", |b| b.iter(|| black_box(auc_scores(&scores, &labels))));

    let data = samples(16, SIZE);
    let ids: Vec<String> = (0..data.len()).map(|i| i.to_string()).collect();
    let model = Model::<f32>::build(&NetworkConfig::desk(SIZE), 0).unwrap();
    c.bench_function("evaluate_16_images", |b| {
        b.iter(|| black_box(evaluate(&model, &data, &ids, 0.5, Aggregation::PerImage).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward, train_step, metrics
}
criterion_main!(benches);
