//! Perturbation searchers: single-step FGSM, salt-and-pepper, single-pixel,
//! plus resampling and exhaustive enumeration for flip searches.
//!
//! Every attack only moves masked coordinates and clamps into
//! the per-coordinate box.

use crate::activeset::{active_set, World};
use crate::data::{Dataset, FeatureVector, Label, Origin, Sample};
use crate::error::{invalid, Error, Result};
use crate::loss::{hard_label, loss_unchecked, LossKind};
use crate::models::Predictor;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSpec {
    /// Coordinates the attack may change.
    pub mask: Vec<usize>,
    /// Per-coordinate `[lo, hi]` clamp.
    pub bounds: Vec<(f64, f64)>,
    /// Max-norm radius for FGSM.
    pub epsilon: f64,
    /// Per-coordinate flip probability for salt-and-pepper.
    pub rate: f64,
    /// Proposal budget.
    pub steps: usize,
}

impl PerturbSpec {
    pub const DEFAULT_EPSILON: f64 = 0.25;
    pub const DEFAULT_RATE: f64 = 0.1;
    pub const DEFAULT_STEPS: usize = 20;

    /// Every coordinate free, one shared box.
    pub fn all(p: usize, lo: f64, hi: f64) -> Self {
        PerturbSpec::masked((0..p).collect(), p, lo, hi)
    }

    pub fn masked(mask: Vec<usize>, p: usize, lo: f64, hi: f64) -> Self {
        PerturbSpec {
            mask,
            bounds: vec![(lo, hi); p],
            epsilon: Self::DEFAULT_EPSILON,
            rate: Self::DEFAULT_RATE,
            steps: Self::DEFAULT_STEPS,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.bounds.len() != p {
            return Err(Error::Dimension { expected: p, got: self.bounds.len() });
        }
        if let Some(&i) = self.mask.iter().find(|&&i| i >= p) {
            return Err(invalid(format!("mask index {i} outside dimension {p}")));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("epsilon {} must be a finite non-negative number", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(invalid(format!("rate {} outside [0, 1]", self.rate)));
        }
        if let Some((i, _)) = self.bounds.iter().enumerate().find(|(_, (lo, hi))| !(lo <= hi)) {
            return Err(invalid(format!("box for coordinate {i} has lo > hi")));
        }
        Ok(())
    }

    fn clamp(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.bounds[i];
        v.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Identity,
    Fgsm,
    SaltPepper,
    SinglePixel,
    /// Masked coordinates redrawn from N(0, 1), then clamped.
    Resample,
    /// Every assignment of the masked coordinates over the given alphabets.
    Exhaustive { alphabets: Vec<u32> },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Identity => "identity",
            AttackKind::Fgsm => "fgsm",
            AttackKind::SaltPepper => "salt_pepper",
            AttackKind::SinglePixel => "single_pixel",
            AttackKind::Resample => "resample",
            AttackKind::Exhaustive { .. } => "exhaustive",
        }
    }
}

fn sample_loss(model: &dyn Predictor, x: &[f64], y: Label) -> f64 {
    loss_unchecked(LossKind::Logistic, model.predict(x), y)
}

fn check_input(model: &dyn Predictor, x: &FeatureVector, spec: &PerturbSpec) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: x.len() });
    }
    spec.validate(x.len())
}

/// One signed-gradient step of size `epsilon` on the masked coordinates.
pub fn fgsm(model: &dyn Predictor, x: &FeatureVector, y: Label, spec: &PerturbSpec) -> Result<FeatureVector> {
    check_input(model, x, spec)?;
    let signs = gradient_signs(model, x, y)?;
    Ok(step_along(x, &signs, spec.epsilon, spec))
}

fn gradient_signs(model: &dyn Predictor, x: &FeatureVector, y: Label) -> Result<Vec<f64>> {
    let g = model
        .gradient_wrt_input(x.as_slice(), y)
        .ok_or_else(|| invalid("FGSM needs a differentiable model"))?;
    Ok(g.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect())
}

fn step_along(x: &FeatureVector, signs: &[f64], radius: f64, spec: &PerturbSpec) -> FeatureVector {
    let mut out = x.clone();
    let v = out.as_mut_slice();
    for &i in &spec.mask {
        v[i] = spec.clamp(i, x[i] + radius * signs[i]);
    }
    out
}

fn salt_pepper_draw(x: &FeatureVector, spec: &PerturbSpec, rng: &mut Rng) -> FeatureVector {
    let mut out = x.clone();
    let v = out.as_mut_slice();
    for &i in &spec.mask {
        if rng.bernoulli(spec.rate) {
            let (lo, hi) = spec.bounds[i];
            v[i] = if rng.bernoulli(0.5) { hi } else { lo };
        }
    }
    out
}

/// Best of `steps` independent salt-and-pepper draws by logistic loss. With
/// no budget the input comes back unchanged.
pub fn salt_pepper(model: &dyn Predictor, x: &FeatureVector, y: Label, spec: &PerturbSpec, rng: &mut Rng) -> Result<FeatureVector> {
    check_input(model, x, spec)?;
    let mut best: Option<(f64, FeatureVector)> = None;
    for _ in 0..spec.steps {
        let cand = salt_pepper_draw(x, spec, rng);
        let l = sample_loss(model, cand.as_slice(), y);
        if best.as_ref().map_or(true, |(b, _)| l > *b) {
            best = Some((l, cand));
        }
    }
    Ok(best.map_or_else(|| x.clone(), |(_, c)| c))
}

fn single_pixel_candidates<'a>(x: &'a FeatureVector, spec: &'a PerturbSpec) -> impl Iterator<Item = FeatureVector> + 'a {
    spec.mask.iter().flat_map(move |&i| {
        let (lo, hi) = spec.bounds[i];
        [lo, hi].into_iter().map(move |v| {
            let mut c = x.clone();
            c.as_mut_slice()[i] = v;
            c
        })
    })
}

/// Tries each masked coordinate at its box extremes, one at a time, and
/// keeps the single change with the largest loss if it beats the clean loss.
pub fn single_pixel(model: &dyn Predictor, x: &FeatureVector, y: Label, spec: &PerturbSpec) -> Result<FeatureVector> {
    check_input(model, x, spec)?;
    let mut best = (sample_loss(model, x.as_slice(), y), x.clone());
    for cand in single_pixel_candidates(x, spec) {
        let l = sample_loss(model, cand.as_slice(), y);
        if l > best.0 {
            best = (l, cand);
        }
    }
    Ok(best.1)
}

/// Masked coordinates redrawn from N(0, 1) and clamped to the box.
fn resample_draw(x: &FeatureVector, spec: &PerturbSpec, rng: &mut Rng) -> FeatureVector {
    let mut out = x.clone();
    let v = out.as_mut_slice();
    for &i in &spec.mask {
        v[i] = spec.clamp(i, rng.normal());
    }
    out
}

/// Lazily generated proposals for a flip search.
struct Proposals<'a> {
    kind: &'a AttackKind,
    x: &'a FeatureVector,
    spec: &'a PerturbSpec,
    step: usize,
    signs: Option<Vec<f64>>,
    pixels: Option<Vec<FeatureVector>>,
    odometer: Option<Vec<u32>>,
}

impl<'a> Proposals<'a> {
    fn new(model: &dyn Predictor, kind: &'a AttackKind, x: &'a FeatureVector, y: Label, spec: &'a PerturbSpec) -> Result<Self> {
        let signs = match kind {
            AttackKind::Fgsm => Some(gradient_signs(model, x, y)?),
            _ => None,
        };
        let pixels = match kind {
            AttackKind::SinglePixel => Some(single_pixel_candidates(x, spec).collect()),
            _ => None,
        };
        if let AttackKind::Exhaustive { alphabets } = kind {
            if alphabets.len() != x.len() {
                return Err(Error::Dimension { expected: x.len(), got: alphabets.len() });
            }
        }
        Ok(Proposals { kind, x, spec, step: 0, signs, pixels, odometer: None })
    }

    fn next(&mut self, rng: &mut Rng) -> Option<FeatureVector> {
        self.step += 1;
        match self.kind {
            AttackKind::Identity => None,
            AttackKind::Fgsm => {
                // Growing radii along the FGSM direction, ending at epsilon.
                if self.step > self.spec.steps {
                    return None;
                }
                let radius = self.spec.epsilon * self.step as f64 / self.spec.steps as f64;
                Some(step_along(self.x, self.signs.as_ref().unwrap(), radius, self.spec))
            }
            AttackKind::SaltPepper => Some(salt_pepper_draw(self.x, self.spec, rng)),
            AttackKind::Resample => Some(resample_draw(self.x, self.spec, rng)),
            AttackKind::SinglePixel => self.pixels.as_ref().unwrap().get(self.step - 1).cloned(),
            AttackKind::Exhaustive { alphabets } => {
                let mask = &self.spec.mask;
                let counter = match &mut self.odometer {
                    None => {
                        self.odometer = Some(vec![0; mask.len()]);
                        self.odometer.as_mut().unwrap()
                    }
                    Some(c) => {
                        let mut k = 0;
                        loop {
                            if k == mask.len() {
                                return None;
                            }
                            c[k] += 1;
                            if c[k] < alphabets[mask[k]] {
                                break;
                            }
                            c[k] = 0;
                            k += 1;
                        }
                        c
                    }
                };
                let mut z = self.x.clone();
                for (&i, &v) in mask.iter().zip(counter.iter()) {
                    z.as_mut_slice()[i] = v as f64;
                }
                Some(z)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipResult {
    pub flipped: bool,
    pub witness: Option<FeatureVector>,
}

/// Runs up to `spec.steps` proposals and stops at the first whose rounded
/// prediction differs from `y`.
pub fn flip_search(model: &dyn Predictor, x: &FeatureVector, y: Label, kind: &AttackKind, spec: &PerturbSpec, rng: &mut Rng) -> Result<FlipResult> {
    check_input(model, x, spec)?;
    if spec.steps == 0 {
        return Ok(FlipResult { flipped: false, witness: None });
    }
    let mut proposals = Proposals::new(model, kind, x, y, spec)?;
    for _ in 0..spec.steps {
        let Some(z) = proposals.next(rng) else { break };
        if hard_label(model.predict(z.as_slice())) != y {
            // fresh forward pass before reporting
            let recheck = hard_label(model.predict(z.as_slice()));
            if recheck != y {
                return Ok(FlipResult { flipped: true, witness: Some(z) });
            }
        }
    }
    Ok(FlipResult { flipped: false, witness: None })
}

/// A procedure that looks for a misaligned-feature perturbation flipping a
/// correctly predicted sample.
pub trait FlipSearcher {
    fn search(&self, model: &dyn Predictor, sample: &Sample, budget: usize, rng: &mut Rng) -> Result<FlipResult>;
}

/// Flip search with a fixed attack and mask.
#[derive(Debug, Clone)]
pub struct AttackSearcher {
    pub kind: AttackKind,
    pub spec: PerturbSpec,
}

impl FlipSearcher for AttackSearcher {
    fn search(&self, model: &dyn Predictor, sample: &Sample, budget: usize, rng: &mut Rng) -> Result<FlipResult> {
        let spec = self.spec.clone().with_steps(budget);
        flip_search(model, &sample.x, sample.y, &self.kind, &spec, rng)
    }
}

/// Exhaustive flip search over the active set of the world's misaligned
/// labeling function at each sample.
#[derive(Debug, Clone)]
pub struct ActiveSetSearcher<'w> {
    pub world: &'w World,
}

impl FlipSearcher for ActiveSetSearcher<'_> {
    fn search(&self, model: &dyn Predictor, sample: &Sample, budget: usize, rng: &mut Rng) -> Result<FlipResult> {
        let d = self.world.domain();
        let a = active_set(self.world.f_m(), &sample.x)?;
        let mut spec = PerturbSpec::masked(a.indices, d.dim(), 0.0, f64::MAX).with_steps(budget);
        spec.bounds = d.alphabets().iter().map(|&s| (0.0, (s - 1) as f64)).collect();
        let kind = AttackKind::Exhaustive { alphabets: d.alphabets().to_vec() };
        flip_search(model, &sample.x, sample.y, &kind, &spec, rng)
    }
}

/// Applies one attack to a single point.
pub fn attack(model: &dyn Predictor, x: &FeatureVector, y: Label, kind: &AttackKind, spec: &PerturbSpec, rng: &mut Rng) -> Result<FeatureVector> {
    match kind {
        AttackKind::Identity => {
            check_input(model, x, spec)?;
            Ok(x.clone())
        }
        AttackKind::Fgsm => fgsm(model, x, y, spec),
        AttackKind::SaltPepper => salt_pepper(model, x, y, spec, rng),
        AttackKind::SinglePixel => single_pixel(model, x, y, spec),
        AttackKind::Resample => {
            check_input(model, x, spec)?;
            Ok(resample_draw(x, spec, rng))
        }
        AttackKind::Exhaustive { .. } => Err(invalid("exhaustive enumeration is a search, not a single attack")),
    }
}

/// Attacks every clean sample against `victim`; labels, groups and
/// annotations carry over and the result is tagged as target data. Sample
/// `i` draws from the stream `seed ^ i`.
pub fn build_adversarial_testset(victim: &dyn Predictor, clean: &Dataset, kind: &AttackKind, spec: &PerturbSpec, seed: u64) -> Result<Dataset> {
    spec.validate(clean.dim())?;
    let mut out = Vec::with_capacity(clean.n());
    for (i, s) in clean.iter().enumerate() {
        let mut rng = Rng::derive(seed, i as u64);
        let x = attack(victim, &s.x, s.y, kind, spec, &mut rng)?;
        out.push(Sample { x, ..s.clone() });
    }
    Dataset::with_dim(clean.dim(), out, Origin::Target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, Model, ModelParams};

    fn linear(w: Vec<f64>) -> Model {
        Model::new(Architecture::logistic(w.len() - 1), ModelParams::new(w)).unwrap()
    }

    #[test]
    fn fgsm_zero_radius_is_identity() {
        let m = linear(vec![1.0, -2.0, 0.5, 0.1]);
        let x = FeatureVector::new(vec![0.3, 0.6, 0.9]);
        let spec = PerturbSpec::all(3, 0.0, 1.0).with_epsilon(0.0);
        assert_eq!(fgsm(&m, &x, Label::ONE, &spec).unwrap(), x);
    }

    #[test]
    fn fgsm_moves_against_the_label() {
        let m = linear(vec![1.0, -2.0, 0.5, 0.1]);
        let x = FeatureVector::new(vec![0.5, 0.5, 0.5]);
        let spec = PerturbSpec::all(3, 0.0, 1.0).with_epsilon(0.2);
        let adv = fgsm(&m, &x, Label::ONE, &spec).unwrap();
        assert_eq!(adv.as_slice(), &[0.3, 0.7, 0.3]);
        assert!(m.loss(adv.as_slice(), Label::ONE, LossKind::Logistic) > m.loss(x.as_slice(), Label::ONE, LossKind::Logistic));
    }

    #[test]
    fn fgsm_needs_gradients() {
        let d = crate::activeset::Domain::binary(2).unwrap();
        let f = crate::activeset::LabelingFn::constant(&d, Label::ONE);
        let x = FeatureVector::new(vec![0.0, 1.0]);
        assert!(fgsm(&f, &x, Label::ONE, &PerturbSpec::all(2, 0.0, 1.0)).is_err());
    }

    #[test]
    fn salt_pepper_rate_extremes() {
        let m = linear(vec![1.0, 1.0, 1.0, 0.0]);
        let x = FeatureVector::new(vec![0.4, 0.5, 0.6]);
        let mut rng = Rng::new(3);
        let same = salt_pepper(&m, &x, Label::ONE, &PerturbSpec::all(3, 0.0, 1.0).with_rate(0.0), &mut rng).unwrap();
        assert_eq!(same, x);
        let forced = salt_pepper(&m, &x, Label::ONE, &PerturbSpec::all(3, 0.0, 1.0).with_rate(1.0), &mut rng).unwrap();
        assert!(forced.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn single_pixel_changes_the_read_coordinate() {
        // Model reads only coordinate 1.
        let m = linear(vec![0.0, 3.0, 0.0, -1.0]);
        let x = FeatureVector::new(vec![0.5, 1.0, 0.5]);
        let adv = single_pixel(&m, &x, Label::ONE, &PerturbSpec::all(3, 0.0, 1.0)).unwrap();
        assert_eq!(adv.hamming_distance(&x), 1);
        assert_eq!(adv[1], 0.0);
        let none = single_pixel(&m, &x, Label::ONE, &PerturbSpec::masked(vec![], 3, 0.0, 1.0)).unwrap();
        assert_eq!(none, x);
    }

    #[test]
    fn flip_search_budget_and_constant_models() {
        let d = crate::activeset::Domain::binary(3).unwrap();
        let one = crate::activeset::LabelingFn::constant(&d, Label::ONE);
        let x = FeatureVector::new(vec![0.0, 1.0, 0.0]);
        let kind = AttackKind::Exhaustive { alphabets: vec![2, 2, 2] };
        let spec = PerturbSpec::all(3, 0.0, 1.0).with_steps(100);
        let r = flip_search(&one, &x, Label::ONE, &kind, &spec, &mut Rng::new(0)).unwrap();
        assert!(!r.flipped);
        let zero_budget = spec.clone().with_steps(0);
        let reads0 = crate::activeset::LabelingFn::from_fn(&d, |c| c[0] == 1);
        let r = flip_search(&reads0, &x, Label::ZERO, &kind, &zero_budget, &mut Rng::new(0)).unwrap();
        assert!(!r.flipped);
        let r = flip_search(&reads0, &x, Label::ZERO, &kind, &spec, &mut Rng::new(0)).unwrap();
        assert!(r.flipped);
        assert_eq!(r.witness.unwrap()[0], 1.0);
    }

    #[test]
    fn exhaustive_proposals_cover_the_cylinder() {
        let d = crate::activeset::Domain::new(vec![2, 3, 2]).unwrap();
        let f = crate::activeset::LabelingFn::constant(&d, Label::ONE);
        let x = FeatureVector::new(vec![1.0, 2.0, 0.0]);
        let spec = PerturbSpec::masked(vec![1, 2], 3, 0.0, 2.0);
        let kind = AttackKind::Exhaustive { alphabets: vec![2, 3, 2] };
        let mut props = Proposals::new(&f, &kind, &x, Label::ONE, &spec).unwrap();
        let mut seen = Vec::new();
        let mut rng = Rng::new(0);
        while let Some(z) = props.next(&mut rng) {
            assert_eq!(z[0], 1.0);
            seen.push(z);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn identity_testset_is_unchanged() {
        let m = linear(vec![1.0, 0.0]);
        let samples = (0..5).map(|i| Sample::new(FeatureVector::new(vec![i as f64 / 5.0]), Label::from_bool(i % 2 == 0))).collect();
        let clean = Dataset::new(samples, Origin::Source).unwrap();
        let out = build_adversarial_testset(&m, &clean, &AttackKind::Identity, &PerturbSpec::all(1, 0.0, 1.0), 0).unwrap();
        assert_eq!(out.samples(), clean.samples());
        assert_eq!(out.origin(), Origin::Target);
    }

    #[test]
    fn spec_validation() {
        let spec = PerturbSpec::all(2, 0.0, 1.0);
        assert!(spec.validate(3).is_err());
        assert!(PerturbSpec::masked(vec![5], 2, 0.0, 1.0).validate(2).is_err());
        assert!(spec.clone().with_rate(1.5).validate(2).is_err());
        assert!(spec.clone().with_epsilon(-1.0).validate(2).is_err());
        assert!(PerturbSpec::all(2, 1.0, 0.0).validate(2).is_err());
    }
}
