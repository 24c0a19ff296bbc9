use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pace_bench::{random_dictionary, random_signal, random_signals, scored_labels};
use pace_core::dictionary::{sparse_code, update_dictionary, SparseCoder};
use pace_core::evaluate::roc_auc;
use pace_core::signals::{normalize, smooth};
use pace_core::{CoderSettings, UserSignal, CHANNELS, SLOTS};

fn bench_sparse_code(c: &mut Criterion) {
    let mut group = c.benchmark_group("sparse_code");
    let signal = random_signal(1);
    for k in [8, 32, 64] {
        let dict = random_dictionary(k, 1.0, 2);
        group.bench_with_input(BenchmarkId::from_parameter(k), &dict, |b, dict| {
            b.iter(|| sparse_code(black_box(signal.view()), dict, 1.0, 1e-8, 1000).unwrap())
        });
    }
    group.finish();
}

const SETTINGS: CoderSettings = CoderSettings {
    lambda: 1.0,
    tol: 1e-8,
    max_sweeps: 1000,
};

fn bench_coder_batch(c: &mut Criterion) {
    let signals = random_signals(256, 3);
    let dict = random_dictionary(32, 1.0, 4);
    let coder = SparseCoder::new(&dict, SETTINGS).unwrap();
    c.bench_function("code_256_signals_k32", |b| {
        b.iter(|| {
            for row in signals.rows() {
                black_box(coder.code(row, None).unwrap());
            }
        })
    });
}

fn bench_update(c: &mut Criterion) {
    let signals = random_signals(1000, 5);
    let dict = random_dictionary(32, 1.0, 6);
    let coder = SparseCoder::new(&dict, SETTINGS).unwrap();
    let mut codes = ndarray::Array2::zeros((signals.nrows(), dict.k()));
    for (i, row) in signals.rows().into_iter().enumerate() {
        codes.row_mut(i).assign(&coder.code(row, None).unwrap().code);
    }
    c.bench_function("dictionary_update_1000x32", |b| {
        b.iter(|| update_dictionary(black_box(signals.view()), &dict, codes.view()).unwrap())
    });
}

fn bench_roc(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc_auc");
    for n in [1_000, 100_000] {
        let (scores, labels) = scored_labels(n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| roc_auc(black_box(&scores), &labels).unwrap())
        });
    }
    group.finish();
}

fn bench_smooth_normalize(c: &mut Criterion) {
    let raw = random_signals(1, 8);
    let mut signal = UserSignal::zeros("u0000", pace_core::signals::Stage::Raw);
    signal.values = raw.into_shape_with_order((CHANNELS, SLOTS)).unwrap();
    c.bench_function("smooth_normalize", |b| {
        b.iter(|| normalize(smooth(black_box(signal.clone())).unwrap()).unwrap())
    });
}

criterion_group!(
    kernels,
    bench_sparse_code,
    bench_coder_batch,
    bench_update,
    bench_roc,
    bench_smooth_normalize
);
criterion_main!(kernels);
