use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use maskrate::analysis::{self, CurvePoint};
use maskrate::corruption::{self, CorruptionConfig};
use maskrate::data::{self, TokenSequence};
use maskrate::model::{self, Heads, ModelConfig, ModelParams, Targets};
use maskrate::seed::{self, Stream};
use maskrate::synth::{self, SynthConfig};
use maskrate::{Batch, ScheduleSpec};

fn corpus() -> (Vec<TokenSequence>, usize) {
    let lines = synth::generate(&SynthConfig {
        n_sequences: 64,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocab = data::build_vocab(lines.iter(), 200).unwrap();
    (data::encode_corpus(&vocab, lines.iter(), 18).unwrap(), vocab.len())
}

fn model_step(c: &mut Criterion) {
    let (ds, v) = corpus();
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        vocab_size: v,
        max_seq_len: 18,
        init_seed: 1,
        tie_embeddings: false,
    };
    let p = ModelParams::init(&cfg).unwrap();
    let batch = Batch::collate(ds[..16].iter().map(|s| s.ids.as_slice()));
    let targets: Vec<Targets> = ds[..16]
        .iter()
        .map(|s| {
            let positions: Vec<usize> = s.maskable().into_iter().step_by(3).collect();
            Targets {
                labels: positions.iter().map(|&i| s.ids[i]).collect(),
                positions,
            }
        })
        .collect();
    c.bench_function("forward b16 d32", |b| {
        b.iter(|| model::forward(&p, black_box(&batch), Heads::MLM).unwrap())
    });
    c.bench_function("forward+backward b16 d32", |b| {
        b.iter(|| model::backward(&p, black_box(&batch), &targets, Heads::MLM).unwrap())
    });
}

fn corruption(c: &mut Criterion) {
    let (ds, v) = corpus();
    let cfg = CorruptionConfig::default();
    c.bench_function("corrupt 64 rows", |b| {
        b.iter(|| {
            for (i, s) in ds.iter().enumerate() {
                let mut rng = seed::rng_for(0, Stream::Corruption, &[i as u64]);
                black_box(corruption::corrupt(s, 0.3, v, &cfg, &mut rng).unwrap());
            }
        })
    });
}

fn schedule(c: &mut Criterion) {
    let spec = ScheduleSpec::parse("cosine-0.3-0.15", 70_000).unwrap();
    c.bench_function("cosine rate x1000", |b| {
        b.iter(|| {
            (0..1000u64)
                .map(|t| spec.masking_rate(black_box(t * 70)).unwrap())
                .sum::<f64>()
        })
    });
}

fn fit(c: &mut Criterion) {
    let pts: Vec<CurvePoint> = (1..=8)
        .map(|k| {
            let t = 10_000.0 * k as f64;
            CurvePoint {
                step: t,
                value: analysis::curve([0.85, 0.4, 5e-5, 1.2], t),
            }
        })
        .collect();
    let mut g = c.benchmark_group("analysis");
    g.sample_size(10);
    g.bench_function("fit speedup curve", |b| {
        b.iter(|| analysis::fit_speedup_curve(black_box(&pts)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, model_step, corruption, schedule, fit);
criterion_main!(benches);
