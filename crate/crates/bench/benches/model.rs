use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hypertyping_bench::model_and_example;
use hypertyping_core::autodiff::Tape;
use hypertyping_core::metrics::multitask_loss;
use hypertyping_core::model::ComponentSpaceConfig;
use hypertyping_core::optim::{AdamConfig, RiemannianAdam};
use hypertyping_core::SpaceTag;

fn model(c: &mut Criterion) {
    for space in SpaceTag::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut model, ex, inventory) = model_and_example(&mut rng, ComponentSpaceConfig::uniform(space));
        let mut g = c.benchmark_group(format!("model/{space}"));
        g.bench_function("forward", |b| {
            let o = model.eval();
            let p = model.bind(&o);
            b.iter(|| model.forward::<_, ChaCha8Rng>(&o, &p, black_box(&ex), None).unwrap())
        });
        let mut tape = Tape::new(model.config.stability);
        let mut grads = None;
        g.bench_function("forward_backward", |b| {
            b.iter(|| {
                tape.clear();
                let p = model.bind(&tape);
                let f = model.forward::<_, ChaCha8Rng>(&tape, &p, black_box(&ex), None).unwrap();
                let loss = multitask_loss(&tape, &f.logits, &ex.labels, &inventory);
                grads = Some(tape.backward(loss).unwrap());
            })
        });
        let grads = grads.expect("backward ran");
        let mut opt = RiemannianAdam::new(AdamConfig::default(), model.config.stability);
        g.bench_function("adam_step", |b| b.iter(|| opt.step(&mut model.params, black_box(&grads)).unwrap()));
        g.finish();
    }
}

criterion_group!(benches, model);
criterion_main!(benches);
