use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use harm_core::attacks::{attack, AttackKind, PerturbSpec};
use harm_core::bounds::{compute_c, h_divergence_exhaustive, ActiveSetTable};
use harm_core::datagen::{gen_synthetic, make_toy_world, sample_a4_target, sample_source, EffectSizes, Split, SyntheticConfig, ToyWorldConfig};
use harm_core::train::{train_erm, TrainConfig};
use harm_core::{Architecture, Model, Rng};

fn worlds(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let cfg = ToyWorldConfig { p: 8, aligned: 3, misaligned: 3, shuffle_blocks: true };
    let tw = make_toy_world(&cfg, &mut rng).unwrap();
    let src = sample_source(&tw.world, 64, &mut rng).unwrap();
    let tgt = sample_a4_target(&tw.world, &src, 64, &mut rng).unwrap();

    c.bench_function("toy world 2+2", |b| {
        let mut rng = Rng::new(1);
        b.iter(|| black_box(make_toy_world(&ToyWorldConfig::default(), &mut rng).unwrap()))
    });
    c.bench_function("active set table p=8", |b| b.iter(|| black_box(ActiveSetTable::new(&tw.world))));
    c.bench_function("compute_c over class p=8", |b| {
        b.iter(|| {
            for theta in tw.class.members() {
                black_box(compute_c(theta, &src, &tw.world).unwrap());
            }
        })
    });
    c.bench_function("exhaustive divergence p=8", |b| b.iter(|| black_box(h_divergence_exhaustive(&tw.class, &src, &tgt).unwrap())));
}

fn training(c: &mut Criterion) {
    let sc = SyntheticConfig { n: 500, ..SyntheticConfig::default() };
    let data = gen_synthetic(&sc, &EffectSizes::for_config(&sc), Split::Train).unwrap();
    let arch = Architecture::mlp(sc.p, 8);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::for_arch(&arch) };
    c.bench_function("erm epoch n=500 mlp", |b| b.iter(|| black_box(train_erm(&data, &arch, &cfg).unwrap())));

    let model = Model::init(arch, &mut Rng::new(2)).unwrap();
    let spec = PerturbSpec::all(sc.p, -4.0, 4.0);
    let s = &data.samples()[0];
    let mut rng = Rng::new(3);
    for kind in [AttackKind::Fgsm, AttackKind::SaltPepper, AttackKind::SinglePixel] {
        c.bench_function(&format!("{} attack p=40", kind.name()), |b| {
            b.iter(|| black_box(attack(&model, &s.x, s.y, &kind, &spec, &mut rng).unwrap()))
        });
    }
}

criterion_group!(benches, worlds, training);
criterion_main!(benches);
