use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kix::config::RunConfig;
use kix::eval::{rollout_eval, EvalMode};
use kix::exec::Exec;
use kix::nets::{PolicyRepository, Variant};
use kix::trainer::AgentParams;

fn eval_rollouts(c: &mut Criterion) {
    let cfg = RunConfig::from_toml_with("variant = \"kix1\"", &[]).unwrap();
    let params = AgentParams::from_config(&cfg);
    let mut group = c.benchmark_group("rollout_eval");
    group.sample_size(10);
    for variant in [Variant::Kix1, Variant::Base] {
        let repo = PolicyRepository::new(variant, 7).unwrap();
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, variant.name()), &exec, |b, &exec| {
                b.iter(|| rollout_eval(&repo, &params, cfg.layout(), 0, 8, 3, EvalMode::Sampled, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, eval_rollouts);
criterion_main!(benches);
