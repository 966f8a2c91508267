//! The discrepancy terms c and q, the Θ-divergence, the finite-class
//! complexity term, bound reports, and exhaustive verifiers for the two
//! generalization bounds and the supporting lemma.

use serde::{Deserialize, Serialize};

use crate::activeset::{active_set_at, dependence_r_at, fn_difference_at, ActiveSet, Domain, LabelingFn, World};
use crate::attacks::FlipSearcher;
use crate::data::{Dataset, Label, Sample};
use crate::error::{invalid, Error, Result};
use crate::loss::hard_label;
use crate::models::{Architecture, Model, Predictor};
use crate::rng::Rng;
use crate::train::TrainConfig;

/// Default confidence parameter for φ.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Largest class accepted by the exhaustive checks.
pub const MAX_CLASS: usize = 1 << 16;
/// Largest class accepted by the pairwise Θ-divergence.
pub const MAX_DIVERGENCE_CLASS: usize = 4096;

const TOL: f64 = 1e-12;

/// Training and test error with every term of both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub train_err: f64,
    pub test_err: f64,
    pub c: f64,
    pub q: f64,
    pub d_theta: f64,
    pub phi: f64,
    pub delta: f64,
    pub bound_c: f64,
    pub bound_d: f64,
}

impl BoundReport {
    pub fn new(train_err: f64, test_err: f64, c: f64, q: f64, d_theta: f64, phi: f64, delta: f64) -> Result<Self> {
        for (name, v) in [("train_err", train_err), ("test_err", test_err), ("c", c), ("q", q), ("d_theta", d_theta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(phi >= 0.0) || !phi.is_finite() {
            return Err(invalid(format!("phi = {phi} must be finite and non-negative")));
        }
        Ok(BoundReport {
            train_err,
            test_err,
            c,
            q,
            d_theta,
            phi,
            delta,
            bound_c: train_err + c + phi,
            bound_d: train_err + d_theta,
        })
    }
}

/// An explicit list of labeling functions over one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHypothesisClass {
    domain: Domain,
    members: Vec<LabelingFn>,
}

impl FiniteHypothesisClass {
    pub fn new(members: Vec<LabelingFn>) -> Result<Self> {
        let first = members.first().ok_or_else(|| invalid("hypothesis class is empty"))?;
        let domain = first.domain().clone();
        if members.iter().any(|m| m.domain() != &domain) {
            return Err(invalid("class members live on different domains"));
        }
        if members.len() > MAX_CLASS {
            return Err(invalid(format!("class of {} members exceeds the cap of {MAX_CLASS}", members.len())));
        }
        Ok(FiniteHypothesisClass { domain, members })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn members(&self) -> &[LabelingFn] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, f: &LabelingFn) -> bool {
        self.members.contains(f)
    }

    /// Adds `f` unless already present.
    pub fn insert(&mut self, f: LabelingFn) -> Result<()> {
        if f.domain() != &self.domain {
            return Err(invalid("member lives on a different domain"));
        }
        if !self.contains(&f) {
            if self.members.len() == MAX_CLASS {
                return Err(invalid(format!("class would exceed the cap of {MAX_CLASS}")));
            }
            self.members.push(f);
        }
        Ok(())
    }
}

/// Active sets of `f_h` and `f_m` at every domain point.
#[derive(Debug, Clone)]
pub struct ActiveSetTable {
    pub f_h: Vec<ActiveSet>,
    pub f_m: Vec<ActiveSet>,
}

impl ActiveSetTable {
    pub fn new(world: &World) -> Self {
        let d = world.domain();
        let at = |f: &LabelingFn| (0..d.size()).map(|i| active_set_at(f, &d.codes(i))).collect();
        ActiveSetTable { f_h: at(world.f_h()), f_m: at(world.f_m()) }
    }
}

fn require_nonempty(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    Ok(())
}

/// Per-sample indicator 𝕀[θ(x)=y]·r(θ, A(f_m,x)).
fn coincidental(theta: &LabelingFn, world: &World, table: Option<&ActiveSetTable>, s: &Sample) -> Result<u8> {
    let d = world.domain();
    let xc = d.codes_of(&s.x)?;
    let idx = d.encode(&xc);
    if theta.at(idx) != s.y.value() {
        return Ok(0);
    }
    match table {
        Some(t) => dependence_r_at(theta, &t.f_m[idx].indices, &xc, s.y),
        None => dependence_r_at(theta, &active_set_at(world.f_m(), &xc).indices, &xc, s.y),
    }
}

fn discrepancy(theta: &LabelingFn, data: &Dataset, world: &World, table: Option<&ActiveSetTable>) -> Result<f64> {
    require_nonempty(data)?;
    let mut count = 0usize;
    for s in data.iter() {
        count += coincidental(theta, world, table, s)? as usize;
    }
    Ok(count as f64 / data.n() as f64)
}

fn tabulate_on(world: &World, theta: &dyn Predictor) -> Result<LabelingFn> {
    if theta.dim() != world.domain().dim() {
        return Err(Error::Dimension { expected: world.domain().dim(), got: theta.dim() });
    }
    Ok(LabelingFn::tabulate(world.domain(), theta))
}

/// Fraction of samples θ gets right while depending on the active set of
/// `f_m`. Exact, by enumeration.
pub fn compute_c(theta: &dyn Predictor, data: &Dataset, world: &World) -> Result<f64> {
    discrepancy(&tabulate_on(world, theta)?, data, world, None)
}

/// [`compute_c`] evaluated on a target dataset.
pub fn compute_q(theta: &dyn Predictor, target_data: &Dataset, world: &World) -> Result<f64> {
    compute_c(theta, target_data, world)
}

/// Search-based estimate of c: each correctly predicted sample counts iff the
/// searcher finds a flip within `budget` proposals. Sample `i` searches with
/// `Rng::derive(seed, i)`.
pub fn estimate_c_by_search(theta: &dyn Predictor, data: &Dataset, searcher: &dyn FlipSearcher, budget: usize, seed: u64) -> Result<f64> {
    if budget == 0 {
        return Err(invalid("search budget must be at least 1"));
    }
    require_nonempty(data)?;
    let mut count = 0usize;
    for (i, s) in data.iter().enumerate() {
        if hard_label(theta.predict(s.x.as_slice())) != s.y {
            continue;
        }
        let mut rng = Rng::derive(seed, i as u64);
        if searcher.search(theta, s, budget, &mut rng)?.flipped {
            count += 1;
        }
    }
    Ok(count as f64 / data.n() as f64)
}

fn pack(bits: impl Iterator<Item = bool>, n: usize) -> Vec<u64> {
    let mut out = vec![0u64; n.div_ceil(64)];
    for (i, b) in bits.enumerate() {
        if b {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

/// Θ-divergence over all pairwise disagreements of the class members:
/// `1 − min_g [#src{g=0} + #tgt{g=1}] / n`.
pub fn h_divergence_exhaustive(class: &FiniteHypothesisClass, src: &Dataset, tgt: &Dataset) -> Result<f64> {
    if class.len() > MAX_DIVERGENCE_CLASS {
        return Err(invalid(format!("class of {} members exceeds the divergence cap of {MAX_DIVERGENCE_CLASS}", class.len())));
    }
    if src.n() != tgt.n() {
        return Err(invalid(format!("source has {} samples but target has {}", src.n(), tgt.n())));
    }
    require_nonempty(src)?;
    let n = src.n();
    let d = class.domain();
    let index = |data: &Dataset| -> Result<Vec<usize>> { data.iter().map(|s| d.index_of(&s.x)).collect() };
    let (si, ti) = (index(src)?, index(tgt)?);
    let outputs = |idx: &[usize]| -> Vec<Vec<u64>> {
        class.members().iter().map(|m| pack(idx.iter().map(|&i| m.at(i) == 1), n)).collect()
    };
    let (so, to) = (outputs(&si), outputs(&ti));
    let mut best = n;
    for a in 0..class.len() {
        for b in a..class.len() {
            let ones_src: u32 = so[a].iter().zip(&so[b]).map(|(x, y)| (x ^ y).count_ones()).sum();
            let ones_tgt: u32 = to[a].iter().zip(&to[b]).map(|(x, y)| (x ^ y).count_ones()).sum();
            best = best.min(n - ones_src as usize + ones_tgt as usize);
        }
    }
    Ok(1.0 - best as f64 / n as f64)
}

fn equalize(src: &Dataset, tgt: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let shrink = |d: &Dataset, n: usize, stream: u64| {
        let mut idx: Vec<usize> = (0..d.n()).collect();
        Rng::derive(seed, stream).shuffle(&mut idx);
        idx.truncate(n);
        idx.sort_unstable();
        d.select(&idx)
    };
    let n = src.n().min(tgt.n());
    let s = if src.n() > n { shrink(src, n, 1) } else { src.clone() };
    let t = if tgt.n() > n { shrink(tgt, n, 2) } else { tgt.clone() };
    (s, t)
}

/// Θ-divergence estimated by training a discriminator of the given
/// architecture on the smooth bracket `Σ_src (1 − p) + Σ_tgt p`, then
/// reporting the bracket at hard labels. The larger dataset is subsampled to
/// the smaller size with the run seed.
pub fn h_divergence_discriminator(src: &Dataset, tgt: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    require_nonempty(src)?;
    require_nonempty(tgt)?;
    if src.dim() != arch.input_dim() || tgt.dim() != arch.input_dim() {
        return Err(Error::Dimension { expected: arch.input_dim(), got: src.dim().max(tgt.dim()) });
    }
    let (src, tgt) = equalize(src, tgt, cfg.seed);
    let n = src.n();
    let mut rng = Rng::new(cfg.seed);
    let mut model = Model::init(arch.clone(), &mut rng)?;
    let merged: Vec<(&[f64], bool)> = src
        .iter()
        .map(|s| (s.x.as_slice(), true))
        .chain(tgt.iter().map(|s| (s.x.as_slice(), false)))
        .collect();
    let mut order: Vec<usize> = (0..merged.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; model.params().len()];
            for &k in chunk {
                let (x, is_src) = merged[k];
                let sign = if is_src { -1.0 } else { 1.0 };
                let (g, _) = model.grads_with(x, |p| sign * p * (1.0 - p), None);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            // per-dataset 1/n, rescaled so a batch step matches a full pass
            let scale = merged.len() as f64 / (chunk.len() as f64 * n as f64);
            model.params_mut().descend(&grad, cfg.learning_rate * scale);
            if !model.params().is_finite() {
                return Err(Error::Numerical("discriminator parameters became non-finite".into()));
            }
        }
    }
    let miss_src = src.iter().filter(|s| hard_label(model.predict(s.x.as_slice())) == Label::ZERO).count();
    let hit_tgt = tgt.iter().filter(|s| hard_label(model.predict(s.x.as_slice())) == Label::ONE).count();
    let bracket = (miss_src + hit_tgt) as f64 / n as f64;
    // the all-zero disagreement is always available and scores exactly 1
    Ok((1.0 - bracket.min(1.0)).clamp(0.0, 1.0))
}

/// `sqrt((ln|Θ| + ln(1/δ)) / 2n)`.
pub fn phi_finite(class_size: usize, n: usize, delta: f64) -> Result<f64> {
    if class_size == 0 {
        return Err(invalid("class size must be at least 1"));
    }
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta = {delta} outside (0, 1]")));
    }
    Ok((((class_size as f64).ln() + (1.0 / delta).ln()) / (2.0 * n as f64)).sqrt())
}

/// Non-constant θ may only disagree with one of `f_h`, `f_m` inside their
/// active cylinders at every point it labels as `f_h` does.
pub fn disagrees_only_on_active_cylinders(theta: &LabelingFn, world: &World, table: &ActiveSetTable) -> Result<bool> {
    if theta.is_constant() {
        return Ok(true);
    }
    let d = world.domain();
    for i in 0..d.size() {
        if theta.at(i) != world.f_h().at(i) {
            continue;
        }
        let xc = d.codes(i);
        let dh = fn_difference_at(theta, world.f_h(), &xc, &table.f_h[i].indices)?;
        let dm = fn_difference_at(theta, world.f_m(), &xc, &table.f_m[i].indices)?;
        if dh * dm != 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One failed inequality, with where it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the offending class member.
    pub member: usize,
    pub trial: Option<usize>,
    /// Domain index of the point, for pointwise checks.
    pub point: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub class_size: usize,
    pub checks: usize,
    /// Violations tolerated by the probabilistic guarantee (0 for exact checks).
    pub allowance: f64,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    fn new(check: &str, class_size: usize, allowance: f64) -> Self {
        VerificationReport { check: check.to_string(), class_size, checks: 0, allowance, violations: Vec::new() }
    }

    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }

    pub fn passed(&self) -> bool {
        self.violations.len() as f64 <= self.allowance
    }
}

fn require_world_ok(world: &World) -> Result<()> {
    let problems = world.assumption_failures();
    if !problems.is_empty() {
        return Err(Error::Precondition(problems.join("; ")));
    }
    Ok(())
}

fn require_class_on(world: &World, class: &FiniteHypothesisClass) -> Result<()> {
    if class.domain() != world.domain() {
        return Err(invalid("class and world live on different domains"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationSuiteConfig {
    pub trials: usize,
    /// Source sample size per trial.
    pub n: usize,
    pub delta: f64,
}

impl Default for GeneralizationSuiteConfig {
    fn default() -> Self {
        GeneralizationSuiteConfig { trials: 20, n: 32, delta: DEFAULT_DELTA }
    }
}

/// Samples `trials` source datasets uniformly from the support, labeled by
/// `f_h`, and checks `ε_t ≤ ε̂_s + c + φ` for every member. The target
/// distribution is uniform over the full domain, so `ε_t` is exact.
pub fn verify_theorem_3_1(world: &World, class: &FiniteHypothesisClass, cfg: &GeneralizationSuiteConfig, rng: &mut Rng) -> Result<VerificationReport> {
    require_world_ok(world)?;
    require_class_on(world, class)?;
    if cfg.trials == 0 || cfg.n == 0 {
        return Err(invalid("trials and n must be at least 1"));
    }
    let table = ActiveSetTable::new(world);
    for (k, theta) in class.members().iter().enumerate() {
        if !disagrees_only_on_active_cylinders(theta, world, &table)? {
            return Err(Error::Precondition(format!(
                "class member {k} ({}) violates the realized-hypothesis assumption",
                theta.to_bitstring()
            )));
        }
    }
    let d = world.domain();
    let phi = phi_finite(class.len(), cfg.n, cfg.delta)?;
    let allowance = cfg.delta * cfg.trials as f64 * class.len() as f64;
    let mut report = VerificationReport::new("theorem_3_1", class.len(), allowance);
    let test_err: Vec<f64> = class
        .members()
        .iter()
        .map(|t| (0..d.size()).filter(|&i| t.at(i) != world.f_h().at(i)).count() as f64 / d.size() as f64)
        .collect();
    // r(θ, A(f_m,x)) per member and point, with y = f_h(x)
    let r: Vec<Vec<u8>> = class
        .members()
        .iter()
        .map(|t| {
            (0..d.size())
                .map(|i| dependence_r_at(t, &table.f_m[i].indices, &d.codes(i), Label::from_bool(world.f_h().at(i) == 1)))
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<_>>()?;
    let support = world.support();
    for trial in 0..cfg.trials {
        let sample: Vec<usize> = (0..cfg.n).map(|_| support[rng.below(support.len() as u64) as usize]).collect();
        for (k, t) in class.members().iter().enumerate() {
            let mut wrong = 0usize;
            let mut coincidental = 0usize;
            for &i in &sample {
                if t.at(i) != world.f_h().at(i) {
                    wrong += 1;
                } else {
                    coincidental += r[k][i] as usize;
                }
            }
            let train = wrong as f64 / cfg.n as f64;
            let c = coincidental as f64 / cfg.n as f64;
            let rhs = train + c + phi;
            report.checks += 1;
            if test_err[k] > rhs + TOL {
                report.violations.push(Violation {
                    member: k,
                    trial: Some(trial),
                    point: None,
                    lhs: test_err[k],
                    rhs,
                    detail: format!("test error {} exceeds train {train} + c {c} + phi {phi}", test_err[k]),
                });
            }
        }
    }
    Ok(report)
}

/// True iff every target point matches some source point `z` on the active
/// set of `f_h` at `z`.
pub fn target_covered_by_source(world: &World, src: &Dataset, tgt: &Dataset, table: &ActiveSetTable) -> Result<bool> {
    let d = world.domain();
    let src_codes: Vec<Vec<u32>> = src.iter().map(|s| d.codes_of(&s.x)).collect::<Result<_>>()?;
    let patterns: Vec<(&[usize], &Vec<u32>)> = src_codes
        .iter()
        .map(|zc| (table.f_h[d.encode(zc)].indices.as_slice(), zc))
        .collect();
    for s in tgt.iter() {
        let xc = d.codes_of(&s.x)?;
        if !patterns.iter().any(|(a, zc)| a.iter().all(|&i| xc[i] == zc[i])) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks `c(θ) ≤ D_Θ + q(θ)` for every member.
pub fn verify_theorem_3_2(world: &World, class: &FiniteHypothesisClass, src: &Dataset, tgt: &Dataset) -> Result<VerificationReport> {
    require_world_ok(world)?;
    require_class_on(world, class)?;
    if !class.contains(&world.f_h().complement()) {
        return Err(Error::Precondition("the complement of f_h is not a class member".into()));
    }
    let table = ActiveSetTable::new(world);
    if !target_covered_by_source(world, src, tgt, &table)? {
        return Err(Error::Precondition("target contains an aligned pattern never seen in the source".into()));
    }
    let div = h_divergence_exhaustive(class, src, tgt)?;
    let mut report = VerificationReport::new("theorem_3_2", class.len(), 0.0);
    for (k, t) in class.members().iter().enumerate() {
        let c = discrepancy(t, src, world, Some(&table))?;
        let q = discrepancy(t, tgt, world, Some(&table))?;
        report.checks += 1;
        if c > div + q + TOL {
            report.violations.push(Violation {
                member: k,
                trial: None,
                point: None,
                lhs: c,
                rhs: div + q,
                detail: format!("c {c} exceeds divergence {div} + q {q}"),
            });
        }
    }
    Ok(report)
}

/// At every support point and every non-constant member that labels it
/// correctly, checks `d(θ,f1,x) = 1 ⇒ r(θ, A(f2,x)) = 1` for both orderings
/// of `(f_h, f_m)`.
pub fn verify_lemma_a1(world: &World, class: &FiniteHypothesisClass) -> Result<VerificationReport> {
    require_world_ok(world)?;
    require_class_on(world, class)?;
    let table = ActiveSetTable::new(world);
    let d = world.domain();
    let mut report = VerificationReport::new("lemma_a1", class.len(), 0.0);
    let pairs = [(world.f_h(), &table.f_h, &table.f_m, "f_h", "f_m"), (world.f_m(), &table.f_m, &table.f_h, "f_m", "f_h")];
    for (k, t) in class.members().iter().enumerate() {
        if t.is_constant() {
            continue;
        }
        for &i in world.support() {
            let y = world.f_h().at(i);
            if t.at(i) != y {
                continue;
            }
            let xc = d.codes(i);
            for (f1, a1, a2, n1, n2) in pairs {
                report.checks += 1;
                let dv = fn_difference_at(t, f1, &xc, &a1[i].indices)?;
                if dv == 1 && dependence_r_at(t, &a2[i].indices, &xc, Label::from_bool(y == 1))? == 0 {
                    report.violations.push(Violation {
                        member: k,
                        trial: None,
                        point: Some(i),
                        lhs: 1.0,
                        rhs: 0.0,
                        detail: format!("d(theta,{n1},x) = 1 but r(theta, A({n2},x)) = 0"),
                    });
                }
            }
        }
    }
    Ok(report)
}
