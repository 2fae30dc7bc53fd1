use std::hint::black_box;

use adjscc::attention::AfParams;
use adjscc::channel::{pack_complex, power_normalize};
use adjscc::rng::{self, StreamTag};
use adjscc::{af_forward, ArchSpec, Channel, ChannelMode, FeatureMap, Model};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;

fn features(channels: usize, side: usize, seed: u64) -> FeatureMap<f32> {
    let mut r = rng::stream(seed, StreamTag::Init, &[]);
    let data = (0..channels * side * side).map(|_| r.random_range(0.0..1.0)).collect();
    FeatureMap::from_vec(channels, side, side, data).unwrap()
}

fn codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("codec");
    g.sample_size(20);
    for attention in [false, true] {
        let label = if attention { "adjscc" } else { "bdjscc" };
        let model = Model::<f32>::init(ArchSpec::preset("tiny", 16, attention).unwrap(), 1).unwrap();
        let x = features(3, 32, 2);
        let z = model.encode(&x, 10.0).unwrap();
        g.bench_function(BenchmarkId::new("encode", label), |b| {
            b.iter(|| model.encode(black_box(&x), 10.0).unwrap())
        });
        g.bench_function(BenchmarkId::new("decode", label), |b| {
            b.iter(|| model.decode(black_box(&z), 10.0, 32, 32).unwrap())
        });
        g.bench_function(BenchmarkId::new("train_step", label), |b| {
            let mut grads = model.params().zeros_like();
            let mut ch = Channel::new(3, ChannelMode::Awgn);
            b.iter(|| {
                model
                    .accumulate_gradients(black_box(&x), 10.0, 10.0, &mut ch, 1.0, &mut grads)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("af_forward");
    for channels in [32, 256] {
        let f = features(channels, 8, 4);
        let params = AfParams::<f32>::init(channels, 16, &mut rng::stream(5, StreamTag::Init, &[]));
        g.bench_with_input(BenchmarkId::from_parameter(channels), &f, |b, f| {
            b.iter(|| af_forward(black_box(f), 10.0, &params).unwrap())
        });
    }
    g.finish();
}

fn channel(c: &mut Criterion) {
    let mut g = c.benchmark_group("channel");
    let k = 1 << 16;
    let mut r = rng::stream(6, StreamTag::Init, &[]);
    let raw: Vec<f64> = (0..2 * k).map(|_| r.random_range(-1.0..1.0)).collect();
    let z = power_normalize(&pack_complex(&raw).unwrap()).unwrap();
    g.throughput(Throughput::Elements(k as u64));
    g.bench_function("awgn", |b| {
        let mut ch = Channel::new(7, ChannelMode::Awgn);
        b.iter(|| ch.transmit(black_box(&z), 10.0).unwrap())
    });
    g.bench_function("power_normalize", |b| {
        let raw = pack_complex(&raw).unwrap();
        b.iter(|| power_normalize(black_box(&raw)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, codec, attention, channel);
criterion_main!(benches);
