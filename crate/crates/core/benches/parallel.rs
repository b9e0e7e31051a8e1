//! One worker against the whole pool on the two hot paths: the batch
//! gradient and real-simulation scoring. Build with
//! `--no-default-features` to time the sequential fallback instead.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use upvtag::model::{Heads, Model, ModelConfig};
use upvtag::par;
use upvtag::sampler::{expand_real_simulation, generate_training_instances, RatioConfig};
use upvtag::synth::{SynthBundle, SynthSpec};
use upvtag::Taxonomy;

struct Fixture {
    model: Model,
    batch: Vec<upvtag::sampler::TrainingInstance>,
    pairs: Vec<upvtag::sampler::TrainingInstance>,
}

fn fixture() -> Fixture {
    let tax = Arc::new(Taxonomy::bundled());
    let spec = SynthSpec {
        labels: 12,
        ..SynthSpec::default()
    };
    let bundle = SynthBundle::generate(&tax, &spec).expect("synthetic bundle");
    let cfg = ModelConfig {
        heads: Heads::T1T2T3,
        emb_dim: spec.dim,
        hidden: 24,
        head_hidden: 16,
        att_dim: 16,
        ..ModelConfig::default()
    };
    let emb = Arc::new(bundle.vectors.clone());
    let model = Model::new(cfg, tax.clone(), emb, bundle.labels.clone()).expect("model");
    let (items, _) =
        generate_training_instances(&bundle.corpus, &tax, &bundle.labels, RatioConfig::default(), None, 1).expect("instances");
    let batch = items.into_iter().take(32).collect();
    let few = upvtag::corpus::Corpus::new(bundle.corpus.samples()[..20].to_vec()).expect("corpus");
    let pairs = expand_real_simulation(&few, &tax, &bundle.labels).expect("pairs");
    Fixture { model, batch, pairs }
}

fn pools() -> Vec<(String, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut v = vec![("1".to_string(), 1)];
    if all > 1 {
        v.push((all.to_string(), all));
    }
    v
}

fn bench(c: &mut Criterion) {
    let f = fixture();
    let mut g = c.benchmark_group("batch_gradient");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_with_input(BenchmarkId::new("threads", name), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || f.model.batch_gradient(&f.batch, Some(3)).expect("gradient")))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("real_simulation_scoring");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_with_input(BenchmarkId::new("threads", name), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || f.model.score_pairs(&f.pairs).expect("scores")))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
