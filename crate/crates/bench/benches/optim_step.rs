use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use steinrule::{Optimizer, OptimizerKind};
use steinrule_bench::cnn_state;

fn optim_step(c: &mut Criterion) {
    let (groups, params, grads) = cnn_state(7);
    let mut g = c.benchmark_group("optim_step_simple_cnn");
    for kind in OptimizerKind::ALL {
        // Past the warm-up so SR-Adam actually shrinks.
        let mut opt = Optimizer::new(kind, kind.default_config(), &groups).unwrap();
        let mut warm = params.clone();
        for _ in 0..12 {
            opt.step(&mut warm, &grads).unwrap();
        }
        g.bench_function(kind.id(), |b| {
            b.iter_batched(
                || (opt.clone(), warm.clone()),
                |(mut o, mut p)| o.step(&mut p, &grads).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, optim_step);
criterion_main!(benches);
