use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sacn::graph::renormalized_adjacency;
use sacn::objectives::{consensus_support, loss_sacn};
use sacn::train::train_prepared;
use sacn::{GatConfig, ModelParams, PreparedGraph, Tape, TrainConfig};
use sacn_bench::{citation_sized, random_dense, CITATION_CLASSES};

fn spmm(c: &mut Criterion) {
    let bundle = citation_sized();
    let a_hat = renormalized_adjacency(&bundle.adjacency);
    let mut group = c.benchmark_group("spmm");
    for width in [7, 48, 1433] {
        let dense = random_dense(bundle.num_nodes(), width, 1);
        group.bench_function(format!("a_hat_x{width}"), |b| {
            b.iter(|| a_hat.mul_dense(dense.view()).unwrap())
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let bundle = citation_sized();
    let prepared = PreparedGraph::new(&bundle, Some(15), true).unwrap();
    let config = GatConfig::default();
    let params = ModelParams::init(
        &mut ChaCha8Rng::seed_from_u64(0),
        prepared.num_features(),
        CITATION_CLASSES,
        &config,
    );
    let mut group = c.benchmark_group("forward_eval");
    group.bench_function("dense_filtered_features", |b| {
        b.iter(|| {
            params
                .predict(&prepared.graph, &prepared.features, &config)
                .unwrap()
        })
    });
    group.bench_function("factored_features", |b| {
        b.iter(|| {
            params
                .predict_features(&prepared.graph, prepared.node_features(), &config)
                .unwrap()
        })
    });
    group.finish();
}

fn loss(c: &mut Criterion) {
    let bundle = citation_sized();
    let support = consensus_support(&bundle.adjacency, true);
    let n = bundle.num_nodes();
    let z1 = random_dense(n, CITATION_CLASSES, 2);
    let z2 = random_dense(n, CITATION_CLASSES, 3);
    c.bench_function("loss_sacn_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v1 = tape.param(z1.clone());
            let v2 = tape.param(z2.clone());
            let terms = loss_sacn(&mut tape, v1, v2, &support, 1e-3).unwrap();
            tape.backward(terms.total).unwrap()
        })
    });
}

fn training_epoch(c: &mut Criterion) {
    let bundle = citation_sized();
    let prepared = PreparedGraph::new(&bundle, Some(15), true).unwrap();
    let config = TrainConfig {
        epochs_pretrain: 1,
        epochs_max: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one_epoch_three_views", |b| {
        b.iter(|| train_prepared(&prepared, &config, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, spmm, forward, loss, training_epoch);
criterion_main!(benches);
