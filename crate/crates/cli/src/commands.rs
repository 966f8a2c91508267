//! The five subcommands. Each writes under the output directory and leaves a
//! `manifest-<command>.json` listing the config hash, the seeds and a
//! SHA-256 for every file it wrote.
//!
//! Layout:
//! `data/seed-<s>/{train,val,test}.csv`, `data/seed-<s>/adv-<victim>-<attack>.csv`,
//! `data/seed-<s>/{world,class}.txt` for world runs, `data/idx/{train,test}.csv`,
//! `models/<method>-seed-<s>.harm`, `traces/<method>-seed-<s>.csv`,
//! `reports/bounds.{csv,svg}`, `verify/report.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use harm_core::activeset::LabelingFn;
use harm_core::attacks::{build_adversarial_testset, AttackSearcher};
use harm_core::bounds::{
    compute_c, compute_q, estimate_c_by_search, h_divergence_discriminator, h_divergence_exhaustive, phi_finite,
    verify_lemma_a1, verify_theorem_3_1, verify_theorem_3_2, BoundReport, FiniteHypothesisClass, GeneralizationSuiteConfig,
    VerificationReport,
};
use harm_core::datagen::{gen_synthetic, load_idx, make_toy_world, sample_a4_target, sample_source, EffectSizes, Split};
use harm_core::formats::{bounds_svg, bounds_to_csv, read_dataset, trace_to_csv, write_dataset, BoundRow};
use harm_core::models::{load_checkpoint, save_checkpoint};
use harm_core::train::{
    default_side_model, error_rate, train_erm, train_regularized, train_worst_case, train_wr, train_wrm, AttackPerturber,
    BlockResample, Perturber, TrainOutcome, WeightKind, WeightScheme, WorldPerturber,
};
use harm_core::{Dataset, Model, Origin, Rng, SideTarget, World};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DataKind, Estimator, Method, RunConfig, Target};
use crate::CliError;

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self, kind: DataKind, seed: u64) -> PathBuf {
        match kind {
            DataKind::Idx => self.root.join("data").join("idx"),
            _ => self.root.join("data").join(format!("seed-{seed}")),
        }
    }

    pub fn model(&self, method: Method, seed: u64) -> PathBuf {
        self.root.join("models").join(format!("{method}-seed-{seed}.harm"))
    }

    pub fn trace(&self, method: Method, seed: u64) -> PathBuf {
        self.root.join("traces").join(format!("{method}-seed-{seed}.csv"))
    }

    pub fn adversarial(&self, kind: DataKind, seed: u64, victim: Method, attack: &str) -> PathBuf {
        // the idx data is shared, adversarial sets are not
        let dir = match kind {
            DataKind::Idx => self.root.join("data").join(format!("seed-{seed}")),
            _ => self.data_dir(kind, seed),
        };
        dir.join(format!("adv-{victim}-{attack}.csv"))
    }

    pub fn bounds_csv(&self) -> PathBuf {
        self.root.join("reports").join("bounds.csv")
    }

    pub fn bounds_svg(&self) -> PathBuf {
        self.root.join("reports").join("bounds.svg")
    }

    pub fn verify_report(&self) -> PathBuf {
        self.root.join("verify").join("report.json")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn read(path: &Path, origin: Origin) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{} does not exist; run gen-data first", path.display())));
    }
    Ok(read_dataset(path, origin)?)
}

/// Runs `f` over `items` on a small pool of scoped threads and returns the
/// results in item order. The first error in item order wins.
fn fan_out<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R, CliError> + Sync) -> Result<Vec<R>, CliError> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, CliError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item ran")).collect()
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(cfg: &RunConfig, layout: &Layout, command: &str, mut files: Vec<PathBuf>) -> Result<PathBuf, CliError> {
    files.sort();
    files.dedup();
    let mut entries = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| io_err(f, e))?;
        let rel = f.strip_prefix(layout.root()).unwrap_or(f);
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
        entries.push(FileEntry { path, sha256: sha256_hex(&bytes) });
    }
    let manifest = Manifest { command, config_hash: cfg.hash(), seeds: &cfg.seeds, files: entries };
    let path = layout.root().join(format!("manifest-{command}.json"));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn world_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("world.txt"), dir.join("class.txt"))
}

/// Loads a world and its class, one truth-table bitstring per class line.
pub fn load_world(world_path: &Path, class_path: &Path) -> Result<(World, FiniteHypothesisClass), CliError> {
    let world = World::load(world_path).map_err(|e| match e {
        harm_core::Error::Io(io) => io_err(world_path, io),
        other => other.into(),
    })?;
    let text = std::fs::read_to_string(class_path).map_err(|e| io_err(class_path, e))?;
    let members = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| LabelingFn::from_bitstring(world.domain().clone(), l))
        .collect::<harm_core::Result<Vec<_>>>()?;
    Ok((world, FiniteHypothesisClass::new(members)?))
}

fn class_text(class: &FiniteHypothesisClass) -> String {
    class.members().iter().map(|m| m.to_bitstring() + "\n").collect()
}

/// Writes the datasets for every seed.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let layout = Layout::new(&cfg.out_dir);
    std::fs::create_dir_all(layout.root()).map_err(|e| io_err(layout.root(), e))?;
    let mut files = Vec::new();
    match cfg.data.kind {
        DataKind::Synthetic => {
            let per_seed = fan_out(&cfg.seeds, |&seed| {
                let sc = cfg.synthetic(seed);
                let effects = EffectSizes::for_config(&sc);
                let dir = layout.data_dir(DataKind::Synthetic, seed);
                let mut out = Vec::new();
                for split in [Split::Train, Split::Val, Split::Test] {
                    let d = gen_synthetic(&sc, &effects, split)?;
                    let path = dir.join(format!("{}.csv", split.name()));
                    ensure_parent(&path)?;
                    write_dataset(&d, &path)?;
                    out.push(path);
                }
                Ok(out)
            })?;
            files.extend(per_seed.into_iter().flatten());
        }
        DataKind::Idx => {
            let d = &cfg.data;
            let dir = layout.data_dir(DataKind::Idx, 0);
            let pairs = [
                ("train", d.train_images.as_ref().unwrap(), d.train_labels.as_ref().unwrap(), Origin::Source),
                ("test", d.test_images.as_ref().unwrap(), d.test_labels.as_ref().unwrap(), Origin::Target),
            ];
            for (name, images, labels, origin) in pairs {
                let data = load_idx(images, labels)?.relabeled(origin);
                let path = dir.join(format!("{name}.csv"));
                ensure_parent(&path)?;
                write_dataset(&data, &path)?;
                files.push(path);
            }
        }
        DataKind::World => {
            let per_seed = fan_out(&cfg.seeds, |&seed| {
                let mut rng = Rng::new(seed);
                let (world, class) = match (&cfg.data.world_file, &cfg.data.class_file) {
                    (Some(w), Some(c)) => load_world(w, c)?,
                    _ => {
                        let tw = make_toy_world(&cfg.data.world, &mut rng)?;
                        (tw.world, tw.class)
                    }
                };
                let src = sample_source(&world, cfg.data.world_n, &mut rng)?;
                let tgt = sample_a4_target(&world, &src, cfg.data.world_n, &mut rng)?;
                let dir = layout.data_dir(DataKind::World, seed);
                let (wp, cp) = world_paths(&dir);
                write_file(&wp, world.to_text().as_bytes())?;
                write_file(&cp, class_text(&class).as_bytes())?;
                let (tp, sp) = (dir.join("train.csv"), dir.join("test.csv"));
                write_dataset(&src, &tp)?;
                write_dataset(&tgt, &sp)?;
                Ok(vec![wp, cp, tp, sp])
            })?;
            files.extend(per_seed.into_iter().flatten());
        }
    }
    files.push(write_manifest(cfg, &layout, "gen-data", files.clone())?);
    Ok(files)
}

fn train_set(cfg: &RunConfig, layout: &Layout, seed: u64) -> Result<Dataset, CliError> {
    read(&layout.data_dir(cfg.data.kind, seed).join("train.csv"), Origin::Source)
}

fn test_set(cfg: &RunConfig, layout: &Layout, seed: u64) -> Result<Dataset, CliError> {
    read(&layout.data_dir(cfg.data.kind, seed).join("test.csv"), Origin::Target)
}

fn seed_world(layout: &Layout, seed: u64) -> Result<(World, FiniteHypothesisClass), CliError> {
    let (w, c) = world_paths(&layout.data_dir(DataKind::World, seed));
    load_world(&w, &c)
}

/// Checks the per-method data requirements before anything trains.
pub fn validate_method(method: Method, data: &Dataset) -> Result<(), CliError> {
    let need = match method {
        Method::WrmGroupdro if !data.all_have_groups() => Some("group ids"),
        Method::Reg | Method::Wr if !data.all_have_aux() => Some("aux annotations"),
        _ => None,
    };
    match need {
        Some(what) => Err(CliError::Validation(format!("method {method} needs {what} on every training sample"))),
        None => Ok(()),
    }
}

/// Trains one method on one dataset with the config's settings.
pub fn train_method(cfg: &RunConfig, method: Method, data: &Dataset, world: Option<&World>, seed: u64) -> Result<TrainOutcome, CliError> {
    validate_method(method, data)?;
    let arch = cfg.arch(data.dim());
    let tc = cfg.train_config(seed);
    let perturber: Box<dyn Perturber + '_> = match (cfg.data.kind, world) {
        (DataKind::World, Some(w)) => Box::new(WorldPerturber { world: w }),
        (DataKind::Synthetic, _) => Box::new(BlockResample { block: cfg.synthetic(seed).spurious_block(), draws: cfg.train.draws }),
        _ => Box::new(AttackPerturber { kind: cfg.attack.train_kind.clone(), spec: cfg.perturb_spec(data.dim()) }),
    };
    let scheme = |kind| WeightScheme::new(kind, &arch, &tc);
    let outcome = match method {
        Method::Erm => train_erm(data, &arch, &tc)?,
        Method::Wt => train_worst_case(data, &arch, &tc, perturber.as_ref())?,
        Method::WrmArl => train_wrm(data, &arch, &tc, scheme(WeightKind::Arl)?)?,
        Method::WrmLff => train_wrm(data, &arch, &tc, scheme(WeightKind::Lff)?)?,
        Method::WrmGroupdro => train_wrm(data, &arch, &tc, scheme(WeightKind::GroupDro)?)?,
        Method::Reg => train_regularized(data, &arch, &tc, default_side_model(&arch, SideTarget::Annotation, &tc)?)?,
        Method::Wr => train_wr(data, &arch, &tc, perturber.as_ref(), default_side_model(&arch, SideTarget::Annotation, &tc)?)?,
    };
    Ok(outcome)
}

/// One checkpoint and one trace CSV per method and seed.
pub fn train(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let mut data = BTreeMap::new();
    for &seed in &cfg.seeds {
        let d = train_set(cfg, &layout, seed)?;
        for &m in &cfg.train.methods {
            validate_method(m, &d)?;
        }
        data.insert(seed, d);
    }
    let jobs: Vec<(Method, u64)> = cfg.train.methods.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let written = fan_out(&jobs, |&(method, seed)| {
        let world = match cfg.data.kind {
            DataKind::World => Some(seed_world(&layout, seed)?.0),
            _ => None,
        };
        let outcome = train_method(cfg, method, &data[&seed], world.as_ref(), seed)?;
        let (mp, tp) = (layout.model(method, seed), layout.trace(method, seed));
        ensure_parent(&mp)?;
        save_checkpoint(&outcome.model, &mp)?;
        write_file(&tp, trace_to_csv(&outcome.trace)?.as_bytes())?;
        Ok(vec![mp, tp])
    })?;
    let mut files: Vec<PathBuf> = written.into_iter().flatten().collect();
    files.push(write_manifest(cfg, &layout, "train", files.clone())?);
    Ok(files)
}

fn load_model(layout: &Layout, method: Method, seed: u64) -> Result<Model, CliError> {
    let path = layout.model(method, seed);
    if !path.exists() {
        return Err(CliError::Io(format!("{} does not exist; run train first", path.display())));
    }
    Ok(load_checkpoint(&path)?)
}

/// Builds an adversarial copy of each seed's test set per configured attack,
/// against the victim method's checkpoint.
pub fn attack(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let jobs: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| (0..cfg.attack.kinds.len()).map(move |k| (s, k))).collect();
    let written = fan_out(&jobs, |&(seed, k)| {
        let kind = &cfg.attack.kinds[k];
        let victim = load_model(&layout, cfg.attack.victim, seed)?;
        let clean = test_set(cfg, &layout, seed)?;
        let adv = build_adversarial_testset(&victim, &clean, kind, &cfg.perturb_spec(clean.dim()), seed)?;
        let path = layout.adversarial(cfg.data.kind, seed, cfg.attack.victim, kind.name());
        ensure_parent(&path)?;
        write_dataset(&adv, &path)?;
        Ok(path)
    })?;
    let mut files = written;
    files.push(write_manifest(cfg, &layout, "attack", files.clone())?);
    Ok(files)
}

fn target_set(cfg: &RunConfig, layout: &Layout, seed: u64, target: &Target) -> Result<Dataset, CliError> {
    match target {
        Target::Test => test_set(cfg, layout, seed),
        Target::Adversarial(kind) => read(&layout.adversarial(cfg.data.kind, seed, cfg.attack.victim, kind.name()), Origin::Target),
    }
}

fn row_name(method: Method, target: &Target) -> String {
    match target {
        Target::Test => method.name().to_string(),
        Target::Adversarial(k) => format!("{method}@{}", k.name()),
    }
}

/// The bound report of one trained model against one target set. `d_theta`
/// is passed in because it does not depend on the model.
pub fn bound_report(
    cfg: &RunConfig,
    model: &Model,
    train: &Dataset,
    target: &Dataset,
    attack_target: &Target,
    world: Option<&(World, FiniteHypothesisClass)>,
    d_theta: f64,
    seed: u64,
) -> Result<BoundReport, CliError> {
    let (c, q, class_size) = match (cfg.bounds.estimator, world) {
        (Estimator::Exact, Some((w, class))) => (compute_c(model, train, w)?, compute_q(model, target, w)?, class.len()),
        (Estimator::Exact, None) => return Err(CliError::Validation("exact estimation needs a world file".into())),
        (Estimator::Search, _) => {
            let kind = match attack_target {
                Target::Test => cfg.attack.train_kind.clone(),
                Target::Adversarial(k) => k.clone(),
            };
            let searcher = AttackSearcher { kind, spec: cfg.perturb_spec(train.dim()) };
            let c = estimate_c_by_search(model, train, &searcher, cfg.bounds.budget, seed)?;
            let q = estimate_c_by_search(model, target, &searcher, cfg.bounds.budget, seed)?;
            (c, q, world.map(|(_, class)| class.len()).unwrap_or(0))
        }
    };
    let class_size = if cfg.bounds.class_size > 0 { cfg.bounds.class_size } else { class_size };
    let phi = if class_size > 0 { phi_finite(class_size, train.n(), cfg.bounds.delta)? } else { 0.0 };
    Ok(BoundReport::new(error_rate(model, train), error_rate(model, target), c, q, d_theta, phi, cfg.bounds.delta)?)
}

/// Θ-divergence between the training set and a target set: exhaustive over
/// the class for worlds, a trained discriminator otherwise.
pub fn divergence(cfg: &RunConfig, train: &Dataset, target: &Dataset, world: Option<&(World, FiniteHypothesisClass)>, seed: u64) -> Result<f64, CliError> {
    match world {
        Some((_, class)) if train.n() == target.n() => Ok(h_divergence_exhaustive(class, train, target)?),
        _ => Ok(h_divergence_discriminator(train, target, &cfg.arch(train.dim()), &cfg.train_config(seed))?),
    }
}

/// Bound rows for every method, seed and target, sorted by (method, seed).
pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let pairs: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| (0..cfg.bounds.targets.len()).map(move |t| (s, t))).collect();
    let divergences = fan_out(&pairs, |&(seed, t)| {
        let world = match cfg.data.kind {
            DataKind::World => Some(seed_world(&layout, seed)?),
            _ => None,
        };
        let train = train_set(cfg, &layout, seed)?;
        let target = target_set(cfg, &layout, seed, &cfg.bounds.targets[t])?;
        divergence(cfg, &train, &target, world.as_ref(), seed)
    })?;
    let d_of: BTreeMap<(u64, usize), f64> = pairs.iter().copied().zip(divergences).collect();
    let jobs: Vec<(Method, u64, usize)> = cfg
        .train
        .methods
        .iter()
        .flat_map(|&m| pairs.iter().map(move |&(s, t)| (m, s, t)))
        .collect();
    let mut rows = fan_out(&jobs, |&(method, seed, t)| {
        let world = match cfg.data.kind {
            DataKind::World => Some(seed_world(&layout, seed)?),
            _ => None,
        };
        let target_kind = &cfg.bounds.targets[t];
        let model = load_model(&layout, method, seed)?;
        let train = train_set(cfg, &layout, seed)?;
        let target = target_set(cfg, &layout, seed, target_kind)?;
        let r = bound_report(cfg, &model, &train, &target, target_kind, world.as_ref(), d_of[&(seed, t)], seed)?;
        Ok(BoundRow::new(&row_name(method, target_kind), seed, &r))
    })?;
    rows.sort_by(|a, b| (a.method.as_str(), a.seed).cmp(&(b.method.as_str(), b.seed)));
    let mut files = vec![layout.bounds_csv()];
    write_file(&layout.bounds_csv(), bounds_to_csv(&rows)?.as_bytes())?;
    if cfg.emit_svg {
        write_file(&layout.bounds_svg(), bounds_svg(&rows).as_bytes())?;
        files.push(layout.bounds_svg());
    }
    files.push(write_manifest(cfg, &layout, "report", files.clone())?);
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct WorldSummary {
    pub seed: u64,
    pub index: usize,
    pub class_size: usize,
    pub theorem_3_1: VerificationReport,
    pub theorem_3_2: VerificationReport,
    pub lemma_a1: VerificationReport,
    /// Truth tables of the members named by any violation.
    pub offending: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteTotals {
    pub worlds: usize,
    pub theorem_3_1_violations: usize,
    pub theorem_3_1_allowance: f64,
    pub theorem_3_2_violations: usize,
    pub lemma_a1_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub config_hash: String,
    pub worlds: Vec<WorldSummary>,
    pub totals: SuiteTotals,
    pub theorem_3_1_passed: bool,
    pub theorem_3_2_passed: bool,
    pub lemma_a1_passed: bool,
    pub passed: bool,
}

fn summarize(seed: u64, index: usize, world: &World, class: &FiniteHypothesisClass, cfg: &RunConfig, rng: &mut Rng) -> Result<WorldSummary, CliError> {
    let t31 = verify_theorem_3_1(world, class, &GeneralizationSuiteConfig { trials: cfg.data.trials, n: cfg.data.world_n, delta: cfg.bounds.delta }, rng)?;
    let src = sample_source(world, cfg.data.world_n, rng)?;
    let tgt = sample_a4_target(world, &src, cfg.data.world_n, rng)?;
    let t32 = verify_theorem_3_2(world, class, &src, &tgt)?;
    let lemma = verify_lemma_a1(world, class)?;
    let mut members: Vec<usize> = [&t31, &t32, &lemma].iter().flat_map(|r| r.violations.iter().map(|v| v.member)).collect();
    members.sort_unstable();
    members.dedup();
    let offending = members.into_iter().map(|k| class.members()[k].to_bitstring()).collect();
    Ok(WorldSummary { seed, index, class_size: class.len(), theorem_3_1: t31, theorem_3_2: t32, lemma_a1: lemma, offending })
}

/// Runs the theorem and lemma checks over generated worlds, or over the
/// configured world file. The generalization check passes when its violations stay
/// within the summed allowance; the other two need zero violations.
pub fn verify_suite(cfg: &RunConfig) -> Result<SuiteReport, CliError> {
    let mut worlds = Vec::new();
    for &seed in &cfg.seeds {
        let mut rng = Rng::new(seed);
        match (&cfg.data.world_file, &cfg.data.class_file) {
            (Some(w), Some(c)) => {
                let (world, class) = load_world(w, c)?;
                worlds.push(summarize(seed, 0, &world, &class, cfg, &mut rng)?);
            }
            _ => {
                for index in 0..cfg.data.worlds {
                    let tw = make_toy_world(&cfg.data.world, &mut rng)?;
                    worlds.push(summarize(seed, index, &tw.world, &tw.class, cfg, &mut rng)?);
                }
            }
        }
    }
    let totals = SuiteTotals {
        worlds: worlds.len(),
        theorem_3_1_violations: worlds.iter().map(|w| w.theorem_3_1.violation_count()).sum(),
        theorem_3_1_allowance: worlds.iter().map(|w| w.theorem_3_1.allowance).sum(),
        theorem_3_2_violations: worlds.iter().map(|w| w.theorem_3_2.violation_count()).sum(),
        lemma_a1_violations: worlds.iter().map(|w| w.lemma_a1.violation_count()).sum(),
    };
    let t31 = totals.theorem_3_1_violations as f64 <= totals.theorem_3_1_allowance;
    let t32 = totals.theorem_3_2_violations == 0;
    let lemma = totals.lemma_a1_violations == 0;
    Ok(SuiteReport {
        config_hash: cfg.hash(),
        worlds,
        totals,
        theorem_3_1_passed: t31,
        theorem_3_2_passed: t32,
        lemma_a1_passed: lemma,
        passed: t31 && t32 && lemma,
    })
}

/// [`verify_suite`] plus the JSON report on disk.
pub fn verify(cfg: &RunConfig) -> Result<(SuiteReport, Vec<PathBuf>), CliError> {
    let layout = Layout::new(&cfg.out_dir);
    let report = verify_suite(cfg)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(&layout.verify_report(), text.as_bytes())?;
    let mut files = vec![layout.verify_report()];
    files.push(write_manifest(cfg, &layout, "verify", files.clone())?);
    Ok((report, files))
}
