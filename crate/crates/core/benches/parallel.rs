use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use shoalguide_core::ppo::loss::{batch_loss_grad, LossCoefs};
use shoalguide_core::ppo::Trainer;
use shoalguide_core::{Exec, RunConfig};

fn config() -> RunConfig {
    let mut c = RunConfig::default();
    c.ppo.total_steps = u64::MAX / 2;
    c.ppo.rollout_len = 2048;
    c.ppo.n_envs = 8;
    c
}

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn rollout(c: &mut Criterion) {
    let mut group = c.benchmark_group("collect_rollout");
    group.sample_size(20);
    for (name, exec) in STRATEGIES {
        let mut trainer = Trainer::new(&config(), exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.collect_rollout().unwrap())
        });
    }
    group.finish();
}

fn update(c: &mut Criterion) {
    let mut group = c.benchmark_group("ppo_update");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        let mut trainer = Trainer::new(&config(), exec).unwrap();
        let (samples, _) = trainer.collect_rollout().unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.update(&samples).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let cfg = config();
    let mut trainer = Trainer::new(&cfg, Exec::Sequential).unwrap();
    let (samples, _) = trainer.collect_rollout().unwrap();
    let net = shoalguide_core::ppo::train(&{
        let mut small = cfg.clone();
        small.ppo.total_steps = 0;
        small
    })
    .unwrap()
    .net;
    let coefs = LossCoefs::new(cfg.ppo.clip_eps, cfg.ppo.value_coef, cfg.ppo.entropy_coef);
    let mut group = c.benchmark_group("batch_gradient");
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, samples.len()), &samples, |b, s| {
            b.iter(|| batch_loss_grad(&net, s, &coefs, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, rollout, update, gradient);
criterion_main!(benches);
