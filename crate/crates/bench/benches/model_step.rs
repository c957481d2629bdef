use criterion::{criterion_group, criterion_main, Criterion};
use steinrule::nn::Mode;
use steinrule_bench::cnn_batch;

fn model_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("simple_cnn");
    g.sample_size(10);
    for batch in [32, 128] {
        let (net, data) = cnn_batch(batch, 3);
        g.bench_function(format!("loss_and_grad_b{batch}"), |b| {
            b.iter(|| net.loss_and_grad(&data, Mode::Train { dropout_seed: 1 }).unwrap())
        });
        g.bench_function(format!("evaluate_b{batch}"), |b| {
            b.iter(|| net.evaluate(&data).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, model_step);
criterion_main!(benches);
