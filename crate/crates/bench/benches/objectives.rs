use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use prefopt_core::objectives::{dpo_loss, pl_dpo_loss, ParametricPolicy};
use prefopt_core::taskgen::{enumerate_soft_dataset, gen_instance, sample_pairs, sample_rankings};
use prefopt_core::train::{train, TrainConfig};
use prefopt_core::PolicyTable;

fn losses(c: &mut Criterion) {
    let inst = gen_instance(8, 8, 1.0, 1.0, 1).unwrap();
    let theta = ParametricPolicy::from_policy(inst.pi_ref()).unwrap();
    let pairs = sample_pairs(&inst, &PolicyTable::uniform(8, 8), 20_000, 2).unwrap();
    let soft = enumerate_soft_dataset(&inst).unwrap();
    let ranks = sample_rankings(&inst, &PolicyTable::uniform(8, 8), 5_000, 4, 3).unwrap();

    let mut g = c.benchmark_group("loss_and_gradient");
    g.bench_function("dpo_pairs_20k", |b| {
        b.iter(|| dpo_loss(&theta, inst.pi_ref(), 0.1, &pairs).unwrap())
    });
    g.bench_function("dpo_soft_8x8", |b| {
        b.iter(|| dpo_loss(&theta, inst.pi_ref(), 0.1, &soft).unwrap())
    });
    g.bench_function("pl_dpo_k4_5k", |b| {
        b.iter(|| pl_dpo_loss(&theta, inst.pi_ref(), 0.1, &ranks).unwrap())
    });
    g.finish();
}

fn training(c: &mut Criterion) {
    let inst = gen_instance(8, 6, 1.0, 1.0, 4).unwrap();
    let soft = enumerate_soft_dataset(&inst).unwrap();
    let cfg = TrainConfig {
        steps: 1000,
        warmup_steps: 0,
        eval_every: 1000,
        ..TrainConfig::default()
    };
    c.bench_function("soft_dpo_1000_steps", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| train(&inst, &soft, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, losses, training);
criterion_main!(benches);
