use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ehrseq_bench::{corpus, prediction_set, tokenizer};
use ehrseq_core::eval::{bootstrap_ci, micro_auprc, Metric};
use ehrseq_core::model::{ClassifierModel, EncoderConfig};
use ehrseq_core::sequence::{encode_all, TruncationSide};

fn bench_encode(c: &mut Criterion) {
    let records = corpus(200, 1);
    let tok = tokenizer(&records, 2000);
    let bytes: usize = records.iter().map(|r| r.body.len()).sum();
    let mut g = c.benchmark_group("encode");
    g.throughput(Throughput::Bytes(bytes as u64));
    for max_len in [512, 4096] {
        g.bench_with_input(BenchmarkId::from_parameter(max_len), &max_len, |b, &n| {
            b.iter(|| encode_all(&tok, &records, n, TruncationSide::Left))
        });
    }
    g.finish();
}

fn bench_forward(c: &mut Criterion) {
    let records = corpus(64, 2);
    let tok = tokenizer(&records, 2000);
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    for max_len in [128, 512] {
        let seqs = encode_all(&tok, &records[..16], max_len, TruncationSide::Left);
        let model = ClassifierModel::new(EncoderConfig::new(tok.vocab_size(), max_len)).unwrap();
        g.throughput(Throughput::Elements(seqs.len() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(max_len), &seqs, |b, s| b.iter(|| model.forward(s).unwrap()));
    }
    g.finish();
}

fn bench_auprc(c: &mut Criterion) {
    let mut g = c.benchmark_group("micro_auprc");
    for n in [1_000, 13_000] {
        let pred = prediction_set(n, 3);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &pred, |b, p| b.iter(|| micro_auprc(p).unwrap()));
    }
    g.finish();
}

fn bench_bootstrap(c: &mut Criterion) {
    let pred = prediction_set(2_000, 4);
    let mut g = c.benchmark_group("bootstrap_1000");
    g.sample_size(10);
    for metric in [Metric::MicroF1, Metric::MicroAuprc] {
        g.bench_function(metric.name(), |b| {
            b.iter(|| bootstrap_ci(&pred, metric, 1000, 11, 0.5).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_encode, bench_forward, bench_auprc, bench_bootstrap);
criterion_main!(benches);
