//! Brute-force oracles for the discrepancy, divergence and confidence terms,
//! written from the definitions without touching the library's enumeration
//! helpers.

use harm_core::attacks::ActiveSetSearcher;
use harm_core::bounds::{compute_c, compute_q, estimate_c_by_search, h_divergence_exhaustive, phi_finite};
use harm_core::datagen::{make_toy_world, sample_a4_target, sample_source, ToyWorldConfig};
use harm_core::{active_set, Dataset, Domain, FeatureVector, Label, LabelingFn, Predictor, Rng, Sample, World};

/// Every code tuple of a binary domain, coordinate 0 most significant.
fn all_tuples(p: usize) -> Vec<Vec<u32>> {
    (0..1u32 << p).map(|k| (0..p).map(|i| (k >> (p - 1 - i)) & 1).collect()).collect()
}

fn eval(f: &dyn Predictor, z: &[u32]) -> u8 {
    let v: Vec<f64> = z.iter().map(|&c| c as f64).collect();
    (f.predict(&v) >= 0.5) as u8
}

fn brute_active(f: &LabelingFn, x: &[u32]) -> Vec<usize> {
    let p = x.len();
    let fx = eval(f, x);
    let mut best: Option<(usize, Vec<u32>)> = None;
    for z in all_tuples(p) {
        if eval(f, &z) != fx {
            continue;
        }
        let m = z.iter().zip(x).filter(|(a, b)| a == b).count();
        if best.as_ref().is_none_or(|(bm, _)| m < *bm) {
            best = Some((m, z));
        }
    }
    let (_, w) = best.unwrap();
    (0..p).filter(|&i| w[i] == x[i]).collect()
}

fn brute_r(theta: &LabelingFn, active: &[usize], x: &[u32], y: u8) -> u8 {
    let p = x.len();
    all_tuples(p)
        .into_iter()
        .filter(|z| (0..p).all(|i| active.contains(&i) || z[i] == x[i]))
        .any(|z| eval(theta, &z) != y) as u8
}

fn codes(s: &Sample) -> Vec<u32> {
    s.x.as_slice().iter().map(|&v| v as u32).collect()
}

fn brute_c(theta: &LabelingFn, data: &Dataset, world: &World) -> f64 {
    let hits: usize = data
        .iter()
        .map(|s| {
            let x = codes(s);
            if eval(theta, &x) != s.y.value() {
                return 0;
            }
            brute_r(theta, &brute_active(world.f_m(), &x), &x, s.y.value()) as usize
        })
        .sum();
    hits as f64 / data.n() as f64
}

fn brute_d(members: &[LabelingFn], src: &Dataset, tgt: &Dataset) -> f64 {
    let n = src.n();
    let mut best = usize::MAX;
    for a in members {
        for b in members {
            let g = |s: &Sample| eval(a, &codes(s)) != eval(b, &codes(s));
            let bracket = src.iter().filter(|s| !g(s)).count() + tgt.iter().filter(|s| g(s)).count();
            best = best.min(bracket);
        }
    }
    1.0 - best as f64 / n as f64
}

fn worlds(count: u64) -> impl Iterator<Item = (u64, harm_core::datagen::ToyWorld, Dataset, Dataset)> {
    (0..count).map(|seed| {
        let mut rng = Rng::new(seed);
        let cfg = ToyWorldConfig { p: 5, aligned: 2, misaligned: 2, shuffle_blocks: true };
        let tw = make_toy_world(&cfg, &mut rng).unwrap();
        let src = sample_source(&tw.world, 16, &mut rng).unwrap();
        let tgt = sample_a4_target(&tw.world, &src, 16, &mut rng).unwrap();
        (seed, tw, src, tgt)
    })
}

#[test]
fn active_sets_match_brute_force() {
    for (_, tw, _, _) in worlds(20) {
        let d = tw.world.domain();
        for x in all_tuples(d.dim()) {
            let fv = FeatureVector::from_codes(&x);
            for f in [tw.world.f_h(), tw.world.f_m()] {
                assert_eq!(active_set(f, &fv).unwrap().indices, brute_active(f, &x));
            }
        }
    }
}

#[test]
fn c_and_q_match_brute_force_on_50_worlds() {
    let mut positive = 0;
    for (seed, tw, src, tgt) in worlds(50) {
        for theta in tw.class.members() {
            positive += (brute_c(theta, &src, &tw.world) > 0.0) as usize;
            assert_eq!(compute_c(theta, &src, &tw.world).unwrap(), brute_c(theta, &src, &tw.world), "world {seed}");
            assert_eq!(compute_q(theta, &tgt, &tw.world).unwrap(), brute_c(theta, &tgt, &tw.world), "world {seed}");
        }
    }
    assert!(positive > 0);
}

#[test]
fn divergence_matches_brute_force_on_50_worlds() {
    for (seed, tw, src, tgt) in worlds(50) {
        let d = h_divergence_exhaustive(&tw.class, &src, &tgt).unwrap();
        assert_eq!(d, brute_d(tw.class.members(), &src, &tgt), "world {seed}");
        assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn phi_matches_closed_form() {
    for (seed, tw, src, _) in worlds(50) {
        let k = tw.class.len() as f64;
        let expect = ((k.ln() + 10f64.ln()) / (2.0 * src.n() as f64)).sqrt();
        let got = phi_finite(tw.class.len(), src.n(), 0.1).unwrap();
        assert!((got - expect).abs() < 1e-15, "world {seed}");
    }
}

#[test]
fn exhaustive_flip_search_equals_exact_c_on_50_worlds() {
    for (seed, tw, src, _) in worlds(50) {
        let searcher = ActiveSetSearcher { world: &tw.world };
        let budget = tw.world.domain().size();
        for theta in tw.class.members() {
            let exact = compute_c(theta, &src, &tw.world).unwrap();
            let searched = estimate_c_by_search(theta, &src, &searcher, budget, seed).unwrap();
            assert_eq!(exact.to_bits(), searched.to_bits(), "world {seed}");
        }
    }
}

#[test]
fn parity_has_an_empty_active_set() {
    let d = Domain::binary(4).unwrap();
    let f_h = LabelingFn::from_fn(&d, |c| c[0] == 1);
    let f_m = LabelingFn::from_fn(&d, |c| (c[2] ^ c[3]) == 1);
    let world = World::new(f_h, f_m.clone(), vec![0, 1], vec![2, 3]).unwrap();
    for x in all_tuples(4) {
        assert!(active_set(&f_m, &FeatureVector::from_codes(&x)).unwrap().indices.is_empty());
    }
    let samples = world
        .support()
        .iter()
        .map(|&i| Sample::new(d.point(i), Label::from_bool(world.f_h().at(i) == 1)))
        .collect();
    let data = Dataset::new(samples, harm_core::Origin::Source).unwrap();
    // With nothing to vary, no correct prediction counts as coincidental.
    assert_eq!(compute_c(&f_m, &data, &world).unwrap(), 0.0);
}
