use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use specs_bench::{batch_of, caption_corpus, tied_series, training_groups};
use specs_core::correlation::kendall_tau_b;
use specs_core::segment::Segmenter;
use specs_core::trainer::optim::AdamW;
use specs_core::trainer::{evaluate, LossWeights, MarginMode, Objective, ToyDualEncoder};

fn segment(c: &mut Criterion) {
    let corpus = caption_corpus(256);
    let seg = Segmenter::default();
    let mut group = c.benchmark_group("segment");
    group.throughput(Throughput::Elements(corpus.len() as u64));
    group.bench_function("256 captions", |b| {
        b.iter(|| {
            for caption in &corpus {
                black_box(seg.segment("img", caption).unwrap());
            }
        })
    });
    group.finish();
}

fn kendall(c: &mut Criterion) {
    let mut group = c.benchmark_group("kendall_tau_b");
    for n in [200, 2_000, 20_000] {
        let (x, y) = tied_series(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kendall_tau_b(black_box(&x), black_box(&y)).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let groups = training_groups(64);
    let objective = Objective { weights: LossWeights::default(), margin: MarginMode::Dynamic, temperature: 0.07 };
    let mut group = c.benchmark_group("train_step");
    for size in [8, 48] {
        let batch = batch_of(&groups, size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            let mut model = ToyDualEncoder::new(0);
            let mut opt = AdamW::new(&model, 1e-3, 1e-2);
            b.iter(|| {
                let eval = evaluate(&model, &batch, &objective, None, true).unwrap();
                opt.step(&mut model, eval.grads.as_ref().unwrap());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, segment, kendall, train_step);
criterion_main!(benches);
