use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use imgdial_core::engine::{apply_adjust, Attribute};
use imgdial_core::harness::{evaluation_dialogue_rng, Dialogue, DialoguePolicy, RulePolicy, RunConfig, World};
use imgdial_core::simulator::DialogueStatus;
use imgdial_core::policy::{train_step, AdamState, QNetwork, ReplayBuffer, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = QNetwork::he_init(23, 40, 20, &mut rng);
    let x: Vec<f64> = (0..23).map(|_| rng.random()).collect();
    c.bench_function("qnet_forward", |b| b.iter(|| net.forward(black_box(&x))));

    let mut buffer = ReplayBuffer::new(2000);
    for i in 0..2000 {
        buffer.push(Transition {
            state: (0..23).map(|_| rng.random()).collect(),
            action: i % 20,
            reward: -1.0,
            next_state: (0..23).map(|_| rng.random()).collect(),
            terminal: i % 10 == 0,
        });
    }
    let mut online = net.clone();
    let target = net.clone();
    let mut adam = AdamState::new(online.params().len(), 1e-3);
    c.bench_function("dqn_train_step_b32", |b| {
        b.iter(|| train_step(&mut online, &target, &mut adam, &buffer, 32, 0.99, &mut rng))
    });
}

fn engine(c: &mut Criterion) {
    let world = World::standard(7);
    let scene = &world.dataset.test()[0];
    let mask = &scene.masks[0];
    c.bench_function("apply_adjust_brightness", |b| {
        b.iter(|| apply_adjust(black_box(&scene.image), mask, Attribute::Brightness, 30).unwrap())
    });
}

fn dialogue(c: &mut Criterion) {
    let world = World::standard(7);
    let config = RunConfig { ser: 0.3, ..RunConfig::default() };
    let scene = &world.dataset.test()[0];
    let mut policy = RulePolicy::new(&world.ontology, config.tau);

    c.bench_function("vectorize_belief", |b| {
        let d = Dialogue::new(&world, scene, &config, config.ser, evaluation_dialogue_rng(0, 0));
        b.iter(|| black_box(d.state()))
    });

    c.bench_function("dialogue_rule_full", |b| {
        let mut i = 0;
        b.iter_batched(
            || {
                i += 1;
                Dialogue::new(&world, scene, &config, config.ser, evaluation_dialogue_rng(0, i)).without_transcript()
            },
            |mut d| {
                while d.status() == DialogueStatus::Ongoing {
                    let s = d.state();
                    let a = policy.choose(d.belief(), &s);
                    d.step(a);
                }
                d.turn()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, network, engine, dialogue);
criterion_main!(benches);
