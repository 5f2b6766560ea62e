//! Hot kernels on one thread versus the default pool.
//!
//! `cargo bench -p textgcn-core` compares both inside one build;
//! `--no-default-features` benches the compiled sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use textgcn::corpus::synthetic::{generate, SyntheticConfig};
use textgcn::corpus::DatasetSplit;
use textgcn::diffusion::textgcn;
use textgcn::embed::{mock_embed, EmbeddingMatrix};
use textgcn::kcl::{kcl_loss, sample_batch, SamplerConfig};
use textgcn::par::with_threads;
use textgcn::rank::evaluate;
use textgcn::tower::{mlp_backward_params, mlp_forward, MlpParams};

const DIM: usize = 64;

fn corpus() -> (DatasetSplit, EmbeddingMatrix) {
    let cfg: SyntheticConfig = "clusters:4,users:4000,items:2000,seed:1".parse().unwrap();
    let split = generate(&cfg).unwrap();
    let emb = mock_embed(&split.catalog, DIM, 0).unwrap();
    (split, emb)
}

const MODES: [(&str, usize); 2] = [("1-thread", 1), ("pool", 0)];

fn kernels(c: &mut Criterion) {
    let (split, emb) = corpus();
    let diffused = textgcn(&split.train, &emb, 2).unwrap();

    let mut g = c.benchmark_group("propagate_L2");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || textgcn(black_box(&split.train), black_box(&emb), 2).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate_recall20");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_threads(threads, || {
                    evaluate(&split.train, &split.test, &diffused.user_final, &diffused.item_final, 20).unwrap()
                })
            })
        });
    }
    g.finish();

    let params = MlpParams::init(DIM, DIM / 2, DIM, 3);
    let batch = diffused.user_final.slice_rows(0..1024);
    let mut g = c.benchmark_group("mlp_forward_backward_1024");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_threads(threads, || {
                    let (y, tape) = mlp_forward(&params, black_box(&batch)).unwrap();
                    mlp_backward_params(&params, &tape, &y).unwrap()
                })
            })
        });
    }
    g.finish();

    let users: Vec<u32> = (0..256).collect();
    let sampler = SamplerConfig {
        k: 5,
        negatives: 256,
        tau: 0.15,
        seed: 0,
        batch_users: users.len(),
    };
    let compact = sample_batch(&split.train, &users, &sampler, 1).unwrap().compact();
    let user_out = diffused.user_final.gather(&users);
    let item_out = diffused.item_final.gather(&compact.items);
    let mut g = c.benchmark_group("kcl_loss_256x5x256");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || kcl_loss(black_box(&user_out), &item_out, &compact, 0.15).unwrap()))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels
}
criterion_main!(benches);
