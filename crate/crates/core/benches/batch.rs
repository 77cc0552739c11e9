use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtmf_arm::batch::{codec_matrix, decode_many, goertzel_many, run_episodes, EpisodeJob};
use dtmf_arm::controller::parse_script;
use dtmf_arm::par::Execution;
use dtmf_arm::signal::{synthesize_sequence, DtmfKey, ToneParams, SUPPORTED_RATES};
use dtmf_arm::Config;
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("codec_matrix");
    let params = ToneParams::default();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| codec_matrix(black_box(&SUPPORTED_RATES), &params, exec)));
    }
    group.finish();
}

fn decode(c: &mut Criterion) {
    let keys = DtmfKey::parse_sequence("123A456B789C*0#D").unwrap();
    let mut group = c.benchmark_group("decode_many");
    for count in [8usize, 64] {
        let buffers: Vec<_> = (0..count)
            .map(|i| synthesize_sequence(&keys, &ToneParams::default(), SUPPORTED_RATES[i % 3]).unwrap())
            .collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, count), &buffers, |b, bufs| {
                b.iter(|| decode_many(bufs, exec))
            });
        }
    }
    group.finish();
}

fn goertzel(c: &mut Criterion) {
    let blocks: Vec<(Vec<f64>, usize)> = (0..4096)
        .map(|i| ((0..205).map(|n| ((n * (i + 3)) as f64 * 0.01).sin()).collect(), 18 + i % 25))
        .collect();
    let mut group = c.benchmark_group("goertzel_many");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| goertzel_many(black_box(&blocks), exec)));
    }
    group.finish();
}

fn episodes(c: &mut Criterion) {
    let script = parse_script("0 2\n1 4\n2 1\n3 5\n").unwrap();
    let jobs: Vec<EpisodeJob> = (0..16)
        .map(|_| EpisodeJob {
            script: script.clone(),
            config: Config::default(),
            duration_s: 4.0,
            dt: 0.01,
        })
        .collect();
    let mut group = c.benchmark_group("run_episodes");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| run_episodes(&jobs, exec)));
    }
    group.finish();
}

criterion_group!(benches, codec, decode, goertzel, episodes);
criterion_main!(benches);
