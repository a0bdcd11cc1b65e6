//! Parallel-vs-serial throughput of the two data-parallel hot loops: one
//! federated round's client updates, and a batch of independent attack
//! trials. Both paths produce identical results; this measures only the
//! speedup (or, on a single core, the overhead) of the rayon dispatch.

use criterion::{criterion_group, criterion_main, Criterion};

use fedunlearn::attack::AttackMode;
use fedunlearn::data::audit::AccessPhase;
use fedunlearn::data::{gen_synthetic, partition_iid};
use fedunlearn::eval::{run_trial, run_trials, Distribution, GridPoint, Level, Scenario};
use fedunlearn::federation::{local_update, FLConfig};
use fedunlearn::model::init_params;
use fedunlearn::seed::{self, Domain};
use fedunlearn::unlearning::{Method, UnlearnConfig};
use fedunlearn::exec;

fn bench_client_round(c: &mut Criterion) {
    let dataset = gen_synthetic(10, 60, 20, 0.3, 1).expect("synthetic corpus");
    let partition = partition_iid(&dataset, 10, 1).expect("iid partition");
    let config = FLConfig::default();
    let layout = config.layout_for(&dataset).expect("layout");
    let global = init_params(&layout, 1);
    let step = |k: usize| {
        let mut rng = seed::rng(1, Domain::BatchOrder { round: 0, client: k as u64 });
        local_update(
            &dataset,
            &global,
            partition.client(k),
            config.local_epochs,
            config.batch_size,
            config.learning_rate,
            &mut rng,
            AccessPhase::Train,
        )
        .expect("local update")
    };

    let mut group = c.benchmark_group("client_round");
    group.sample_size(30);
    group.bench_function("parallel", |b| b.iter(|| exec::map_indexed(10, step)));
    group.bench_function("serial", |b| b.iter(|| exec::map_indexed_serial(10, step)));
    group.finish();
}

fn bench_trials(c: &mut Criterion) {
    let scenario = Scenario {
        fl: FLConfig {
            num_clients: 4,
            rounds: 4,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.05,
            hidden_dims: vec![16],
            seed: 0,
        },
        num_classes: 6,
        samples_per_class: 30,
        feature_dim: 12,
        spread: 0.3,
        unlearn: UnlearnConfig::default(),
        window: 4,
    };
    let point = GridPoint {
        method: Method::FedEraser,
        level: Level::Class,
        num_label_categories: 1,
        forgotten_fraction: None,
        mode: AttackMode::KnownCount(1),
        distribution: Distribution::Iid,
    };

    let mut group = c.benchmark_group("trials");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| run_trials(&scenario, &point, 4, 1).expect("trials"))
    });
    group.bench_function("serial", |b| {
        b.iter(|| {
            exec::map_indexed_serial(4, |i| {
                run_trial(&scenario, &point, 1 + i as u64).expect("trial")
            })
        })
    });
    group.finish();
}

criterion_group!(benches, bench_client_round, bench_trials);
criterion_main!(benches);
