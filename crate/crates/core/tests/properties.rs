use harm_core::attacks::{attack, AttackKind, PerturbSpec};
use harm_core::bounds::{compute_c, compute_q, h_divergence_exhaustive, verify_theorem_3_2, BoundReport};
use harm_core::datagen::{make_toy_world, sample_a4_target, sample_source, ToyWorldConfig};
use harm_core::formats::{dataset_from_csv, dataset_to_csv};
use harm_core::models::{checkpoint_bytes, parse_checkpoint};
use harm_core::train::{wrm_weights, worst_case_point, BlockResample, WeightScheme};
use harm_core::{
    active_set, hard_label, Architecture, Dataset, Domain, FeatureVector, Label, LabelingFn, LossKind, Model, Origin, Predictor, Rng,
    Sample,
};
use proptest::prelude::*;

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    prop_oneof![(1usize..8).prop_map(Architecture::logistic), (1usize..6, 1usize..6).prop_map(|(d, h)| Architecture::mlp(d, h))]
}

fn model_and_point() -> impl Strategy<Value = (Model, Vec<f64>, Label, u64)> {
    (arch_strategy(), any::<u64>(), any::<bool>()).prop_map(|(arch, seed, y)| {
        let mut rng = Rng::new(seed);
        let x = (0..arch.input_dim()).map(|_| rng.normal() * 2.0).collect();
        (Model::init(arch, &mut rng).unwrap(), x, Label::from_bool(y), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn active_set_witness_keeps_the_value(p in 1usize..6, table_seed in any::<u64>(), point in any::<u32>()) {
        let d = Domain::binary(p).unwrap();
        let mut rng = Rng::new(table_seed);
        let table: Vec<u8> = (0..d.size()).map(|_| rng.bernoulli(0.5) as u8).collect();
        let f = LabelingFn::from_table(d.clone(), table).unwrap();
        let idx = point as usize % d.size();
        let x = d.point(idx);
        let a = active_set(&f, &x).unwrap();
        let w = FeatureVector::from_codes(&a.witness);
        prop_assert_eq!(f.label(&w).unwrap(), f.label(&x).unwrap());
        let xc = d.codes(idx);
        for i in 0..p {
            prop_assert_eq!(a.indices.contains(&i), a.witness[i] == xc[i]);
        }
    }

    #[test]
    fn bound_terms_stay_in_range(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let tw = make_toy_world(&ToyWorldConfig::default(), &mut rng).unwrap();
        let src = sample_source(&tw.world, 12, &mut rng).unwrap();
        let tgt = sample_a4_target(&tw.world, &src, 12, &mut rng).unwrap();
        let d = h_divergence_exhaustive(&tw.class, &src, &tgt).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        for theta in tw.class.members() {
            let c = compute_c(theta, &src, &tw.world).unwrap();
            let q = compute_q(theta, &tgt, &tw.world).unwrap();
            let acc = src.iter().filter(|s| hard_label(theta.predict(s.x.as_slice())) == s.y).count() as f64 / src.n() as f64;
            prop_assert!((0.0..=1.0).contains(&c) && (0.0..=1.0).contains(&q));
            prop_assert!(c <= acc);
        }
        prop_assert!(verify_theorem_3_2(&tw.world, &tw.class, &src, &tgt).unwrap().passed());
    }

    #[test]
    fn bound_report_sums(train in 0.0f64..=1.0, test in 0.0f64..=1.0, c in 0.0f64..=1.0, d in 0.0f64..=1.0, phi in 0.0f64..3.0) {
        let r = BoundReport::new(train, test, c, c, d, phi, 0.1).unwrap();
        prop_assert_eq!(r.bound_c, train + c + phi);
        prop_assert_eq!(r.bound_d, train + d);
    }

    #[test]
    fn attacks_respect_mask_and_box((model, x, y, seed) in model_and_point(), kind in 0usize..5, lo in -1.0f64..0.0, width in 0.1f64..2.0, keep in any::<u8>()) {
        let p = x.len();
        let mask: Vec<usize> = (0..p).filter(|i| keep >> (i % 8) & 1 == 1).collect();
        let hi = lo + width;
        let x: Vec<f64> = x.iter().map(|v| v.clamp(lo, hi)).collect();
        let kinds = [AttackKind::Identity, AttackKind::Fgsm, AttackKind::SaltPepper, AttackKind::SinglePixel, AttackKind::Resample];
        let spec = PerturbSpec::masked(mask.clone(), p, lo, hi).with_steps(5);
        let fv = FeatureVector::new(x.clone());
        let z = attack(&model, &fv, y, &kinds[kind], &spec, &mut Rng::new(seed)).unwrap();
        for i in 0..p {
            let v = z.as_slice()[i];
            prop_assert!((lo..=hi).contains(&v));
            if !mask.contains(&i) {
                prop_assert_eq!(v, x[i]);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exact((model, _, _, _) in model_and_point()) {
        let back = parse_checkpoint(&checkpoint_bytes(&model)).unwrap();
        let a: Vec<u64> = model.params().as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params().as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.arch(), model.arch());
    }

    #[test]
    fn dataset_csv_round_trips(rows in prop::collection::vec((prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), any::<bool>(), 0u32..4), 1..20)) {
        let samples: Vec<Sample> = rows
            .into_iter()
            .map(|(x, y, g)| Sample::new(FeatureVector::new(x), Label::from_bool(y)).with_group(g))
            .collect();
        let d = Dataset::new(samples, Origin::Target).unwrap();
        prop_assert_eq!(dataset_from_csv(&dataset_to_csv(&d).unwrap(), Origin::Target).unwrap(), d);
    }

    #[test]
    fn group_weights_normalize_within_groups((model, _, _, seed) in model_and_point(), n in 1usize..24) {
        let mut rng = Rng::new(seed ^ 1);
        let p = model.arch().input_dim();
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let x = FeatureVector::new((0..p).map(|_| rng.normal() * 3.0).collect());
                Sample::new(x, Label::from_bool(rng.bernoulli(0.5))).with_group(rng.below(3) as u32)
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let w = wrm_weights(&mut WeightScheme::GroupDro, &batch, &model).unwrap();
        for g in 0..3 {
            let members: Vec<f64> = batch.iter().zip(&w).filter(|(s, _)| s.group == Some(g)).map(|(_, &l)| l).collect();
            if !members.is_empty() {
                prop_assert!((members.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        prop_assert!(w.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn worst_case_never_below_clean((model, x, y, seed) in model_and_point(), draws in 0usize..6) {
        let p = x.len();
        let s = Sample::new(FeatureVector::new(x), y);
        let block = BlockResample { block: (0..p).step_by(2).collect(), draws };
        let (_, l) = worst_case_point(&model, &s, &block, &mut Rng::new(seed)).unwrap();
        prop_assert!(l >= model.loss(s.x.as_slice(), y, LossKind::Logistic));
    }
}
