use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gsim_core::dsl::Interpreter;
use gsim_core::envs::{generate_dataset, gt_config, EnvSpec, Model};
use gsim_core::gfo::fitness;
use gsim_core::metrics::wasserstein1;
use gsim_core::rng::derive_stream;
use gsim_core::state::Action;

fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for preset in ["sir", "supply", "hospital"] {
        let env = EnvSpec::preset(preset).unwrap();
        let config = gt_config(&env);
        let interp = Interpreter::new(&config).unwrap();
        let params = env.param_values();
        let hand = Model::hand_coded(&env).transition(&[]).unwrap();
        let stream = derive_stream(1, &[]);
        let mut init_stream = stream.child(0);
        let state = env.init_state(&mut init_stream);
        let action = if env.has_action() {
            Action::some(5)
        } else {
            Action::NONE
        };
        group.bench_with_input(BenchmarkId::new("interpreted", preset), &preset, |b, _| {
            b.iter(|| interp.step(&params, &state, action, &stream.child(1)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hand_coded", preset), &preset, |b, _| {
            b.iter(|| hand.step(&state, action, 0, &stream.child(1)).unwrap())
        });
    }
    group.finish();
}

fn bench_rollout(c: &mut Criterion) {
    let env = EnvSpec::preset("sir").unwrap();
    let config = gt_config(&env);
    let interp = Interpreter::new(&config).unwrap();
    let params = env.param_values();
    let stream = derive_stream(2, &[]);
    let mut init_stream = stream.child(0);
    let init = env.init_state(&mut init_stream);
    let actions = vec![Action::NONE; 60];
    c.bench_function("rollout/sir_60_steps", |b| {
        b.iter(|| interp.rollout_observed(&params, &init, &actions, &env.projection, &stream))
    });
}

fn bench_fitness(c: &mut Criterion) {
    let env = EnvSpec::preset("sir").unwrap();
    let config = gt_config(&env);
    let interp = Interpreter::new(&config).unwrap();
    let data = generate_dataset(&env, 10, 60, &env.policy.clone(), 7);
    let params = config.defaults();
    c.bench_function("fitness/sir_10traj_mc5", |b| {
        b.iter(|| fitness(&interp, &params, &data, 5, 42))
    });
}

fn bench_wasserstein(c: &mut Criterion) {
    let mut stream = derive_stream(3, &[]);
    let draw = |stream: &mut gsim_core::RngStream, n: usize| {
        (0..n)
            .map(|_| vec![stream.uniform01(), stream.uniform01(), stream.uniform01()])
            .collect::<Vec<_>>()
    };
    let a = draw(&mut stream, 1000);
    let b = draw(&mut stream, 1000);
    c.bench_function("wasserstein1/1000x3", |bench| {
        bench.iter(|| wasserstein1(&a, &b).unwrap())
    });
}

criterion_group!(benches, bench_step, bench_rollout, bench_fitness, bench_wasserstein);
criterion_main!(benches);
