//! Criterion benchmarks for the hot paths: attention, fused encoding,
//! the full forward pass, and one training step.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusetrack_core::attention::{multi_head_attention, AttentionConfig, AttnWeights};
use fusetrack_core::config::RunConfig;
use fusetrack_core::image::Image;
use fusetrack_core::model::TrackModel;
use fusetrack_core::params::ParamStore;
use fusetrack_core::pe::{Source, SourceGrid, UntiedPeParams};
use fusetrack_core::{BBox, Graph};

fn rand_tokens(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = AttentionConfig::new(64, 4);
    let mut store = ParamStore::new();
    let w = AttnWeights::init(&mut store, "attn", 64, &mut rng);
    let data = rand_tokens(&mut rng, 80, 64);
    c.bench_function("attention_80x64_4h", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let t = g.constant(&[80, 64], data.clone());
            let p = w.leaves(&mut g, &store);
            multi_head_attention(&mut g, t, t, t, &p, cfg, None).unwrap()
        })
    });
}

fn bench_fusion_bias(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let template = SourceGrid {
        source: Source::Template,
        h: 4,
        w: 4,
    };
    let search = SourceGrid {
        source: Source::Search,
        h: 8,
        w: 8,
    };
    let pe = UntiedPeParams::init(&mut store, "enc", 32, 2, template, search, &mut rng);
    c.bench_function("fusion_bias_80x80_2h", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            pe.fusion_bias(
                &mut g,
                &store,
                &[Source::Template, Source::Search],
                &[Source::Template, Source::Search],
            )
            .unwrap()
        })
    });
}

fn model_fixture() -> (ParamStore, TrackModel, Image, Image) {
    let mut cfg = RunConfig::default();
    cfg.model.d_model = 32;
    cfg.model.stride = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let model = TrackModel::init(&mut store, &cfg.model, &mut rng);
    let template = Image::filled(32, 32, [0.5, 0.4, 0.3]);
    let mut search = Image::filled(64, 64, [0.3, 0.3, 0.3]);
    for y in 20..36 {
        for x in 24..44 {
            search.set(x, y, [0.9, 0.2, 0.2]);
        }
    }
    (store, model, template, search)
}

fn bench_forward(c: &mut Criterion) {
    let (store, model, template, search) = model_fixture();
    c.bench_function("model_forward_32x64_s8", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            model.forward(&mut g, &store, &template, &search).unwrap()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let (mut store, model, template, search) = model_fixture();
    let gt = BBox::new(24.0, 20.0, 20.0, 16.0);
    c.bench_function("forward_backward_32x64_s8", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let out = model.forward(&mut g, &store, &template, &search).unwrap();
            let (report, _) = model.loss(&mut g, &out, &gt, None).unwrap();
            g.backward(report.total).unwrap();
            store.zero_grads();
            g.write_grads(&mut store).unwrap();
        })
    });
}

criterion_group!(
    benches,
    bench_attention,
    bench_fusion_bias,
    bench_forward,
    bench_train_step
);
criterion_main!(benches);
