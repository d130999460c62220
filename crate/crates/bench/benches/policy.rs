use criterion::{black_box, criterion_group, criterion_main, Criterion};
use reflectrl_bench::{fixture_env, fixture_tasks};
use reflectrl_core::policy::{distribution, grad_logprob, logprob_of};
use reflectrl_core::training::PolicySet;
use reflectrl_core::{EnvKind, Slots, TrainingConfig};

fn bench_policy(c: &mut Criterion) {
    let env = fixture_env(EnvKind::GraphQa);
    let task = fixture_tasks(&env, 1).remove(0);
    let state = env.reset(&task, &[]).unwrap();
    let table = env.legal_actions(&task, &state);
    let slots = table.slots();
    let space = env.feature_space();
    let features = space.featurize_state(&state.text);
    let policies = PolicySet::init(&env, &TrainingConfig::default());
    let params = policies.planner();
    c.bench_function("distribution", |bench| {
        bench.iter(|| distribution(black_box(params), &features, Slots::List(&slots), 1.0));
    });
    c.bench_function("logprob_of", |bench| {
        bench.iter(|| logprob_of(black_box(params), &features, Slots::List(&slots), 0));
    });
    c.bench_function("grad_logprob", |bench| {
        bench.iter(|| grad_logprob(black_box(params), &features, Slots::List(&slots), 0));
    });
}

criterion_group!(benches, bench_policy);
criterion_main!(benches);
