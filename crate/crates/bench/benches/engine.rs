use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use counternet::data::stream_pixels;
use counternet::event::{run_stream, NeuronModel, RunOptions};
use counternet::train::{train_step, Mat, TrainConfig, TrainerCheckpoint};
use counternet::{frame, ActivationKind, Network};
use counternet_bench::{blob_inputs, random_model};

const ARCH: &str = "784-300-100-10";

fn event_runtime(c: &mut Criterion) {
    let inputs = blob_inputs(16, 7);
    let mut group = c.benchmark_group("event_runtime");
    for (name, act) in [
        ("basic", ActivationKind::Binary),
        ("extended", ActivationKind::drelu(64)),
    ] {
        let net = Network::new(random_model(ARCH, act, 1));
        let model = NeuronModel::of(act);
        let streams: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| stream_pixels(x, i as u64).unwrap())
            .collect();
        let events: usize = streams.iter().map(|s| s.len()).sum();
        group.throughput(Throughput::Elements(events as u64));
        group.bench_function(name, |b| {
            b.iter(|| {
                for s in &streams {
                    black_box(run_stream(&net, s, model, RunOptions::default()).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn frame_forward(c: &mut Criterion) {
    let inputs = blob_inputs(16, 8);
    let model = random_model(ARCH, ActivationKind::drelu(64), 2);
    let mut group = c.benchmark_group("frame_forward");
    group.throughput(Throughput::Elements(inputs.len() as u64));
    group.bench_function("drelu", |b| {
        b.iter(|| {
            for x in &inputs {
                black_box(frame::forward(&model, x).unwrap());
            }
        })
    });
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let batch = 200;
    let inputs = blob_inputs(batch, 9);
    let labels: Vec<u8> = (0..batch).map(|i| (i % 10) as u8).collect();
    let x = Mat::from_vec(
        batch,
        784,
        inputs.iter().flatten().map(|&v| v as f64).collect(),
    );
    let spec = random_model(ARCH, ActivationKind::drelu(64), 3).spec;
    let config = TrainConfig::default();
    let start =
        TrainerCheckpoint::init(&spec, 2.0, &mut counternet::SeedStream::new(3).rng("init"));
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    group.throughput(Throughput::Elements(batch as u64));
    group.bench_function("batch200", |b| {
        b.iter_batched(
            || (start.clone(), x.clone()),
            |(mut ckpt, x)| black_box(train_step(&mut ckpt, x, &labels, &config)),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, event_runtime, frame_forward, training_step);
criterion_main!(benches);
