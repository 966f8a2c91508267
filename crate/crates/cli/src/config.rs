//! Run configuration: flat `section.key = value` text with a fixed schema.
//!
//! Lines may also be grouped under a `[section]` header, in which case bare
//! keys are taken to belong to that section. `#` starts a comment. Unknown
//! keys, repeated keys and malformed values are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use harm_core::attacks::{AttackKind, PerturbSpec};
use harm_core::datagen::{SyntheticConfig, ToyWorldConfig};
use harm_core::train::TrainConfig;
use harm_core::Architecture;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every accepted key with its default value.
pub const SCHEMA: &[(&str, &str)] = &[
    ("data.kind", "synthetic"),
    ("data.n", "2000"),
    ("data.p", "40"),
    ("data.rho", "0.9"),
    ("data.per_coordinate", "false"),
    ("data.world_p", "6"),
    ("data.aligned", "2"),
    ("data.misaligned", "2"),
    ("data.worlds", "100"),
    ("data.world_n", "32"),
    ("data.trials", "20"),
    ("data.world_file", ""),
    ("data.class_file", ""),
    ("data.train_images", ""),
    ("data.train_labels", ""),
    ("data.test_images", ""),
    ("data.test_labels", ""),
    ("model.arch", "mlp"),
    ("model.hidden", "8"),
    ("train.methods", "erm"),
    ("train.epochs", "300"),
    ("train.learning_rate", "auto"),
    ("train.batch_size", "32"),
    ("train.reg_balance", "1"),
    ("train.early_stop_patience", "0"),
    ("train.draws", "1"),
    ("attack.kinds", "fgsm"),
    ("attack.victim", "erm"),
    ("attack.train_kind", "resample"),
    ("attack.mask", "auto"),
    ("attack.epsilon", "0.25"),
    ("attack.rate", "0.1"),
    ("attack.steps", "20"),
    ("attack.lo", "-inf"),
    ("attack.hi", "inf"),
    ("bounds.delta", "0.1"),
    ("bounds.estimator", "search"),
    ("bounds.budget", "20"),
    ("bounds.class_size", "0"),
    ("bounds.targets", "test"),
    ("output.dir", "out"),
    ("output.emit_svg", "true"),
    ("seeds.list", "0"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Synthetic,
    World,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Erm,
    Wt,
    WrmArl,
    WrmLff,
    WrmGroupdro,
    Reg,
    Wr,
}

impl Method {
    pub const ALL: [Method; 7] = [Method::Erm, Method::Wt, Method::WrmArl, Method::WrmLff, Method::WrmGroupdro, Method::Reg, Method::Wr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Wt => "wt",
            Method::WrmArl => "wrm-arl",
            Method::WrmLff => "wrm-lff",
            Method::WrmGroupdro => "wrm-groupdro",
            Method::Reg => "reg",
            Method::Wr => "wr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Exact c and q over an enumerable world.
    Exact,
    /// c and q by flip search under the configured attack.
    Search,
}

/// Which data a bound report measures the test side on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Test,
    /// The adversarial set built against the victim with this attack.
    Adversarial(AttackKind),
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Test => "test".into(),
            Target::Adversarial(k) => k.name().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// The spurious block for synthetic data, every coordinate otherwise.
    Auto,
    All,
    Spurious,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub kind: DataKind,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub per_coordinate: bool,
    pub world: ToyWorldConfig,
    pub worlds: usize,
    pub world_n: usize,
    pub trials: usize,
    pub world_file: Option<PathBuf>,
    pub class_file: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub methods: Vec<Method>,
    pub epochs: usize,
    /// `None` picks the architecture default.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub reg_balance: f64,
    pub early_stop_patience: usize,
    /// Redraws per sample for the spurious-block perturber.
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub victim: Method,
    pub train_kind: AttackKind,
    pub mask: MaskKind,
    pub epsilon: f64,
    pub rate: f64,
    pub steps: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSection {
    pub delta: f64,
    pub estimator: Estimator,
    pub budget: usize,
    /// Finite class size for φ; 0 reports φ = 0.
    pub class_size: usize,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub arch_kind: String,
    pub hidden: usize,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub bounds: BoundsSection,
    pub out_dir: PathBuf,
    pub emit_svg: bool,
    pub seeds: Vec<u64>,
    /// Resolved `key = value` lines, defaults included, in schema order.
    resolved: BTreeMap<String, String>,
}

fn bad(key: &str, value: &str, why: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{key} = {value:?}: {why}"))
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(bad(key, value, "list is empty"));
    }
    items.into_iter().map(item).collect()
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn attack_kind(key: &str, value: &str) -> Result<AttackKind, CliError> {
    match value {
        "fgsm" => Ok(AttackKind::Fgsm),
        "salt_pepper" => Ok(AttackKind::SaltPepper),
        "single_pixel" => Ok(AttackKind::SinglePixel),
        "resample" => Ok(AttackKind::Resample),
        "identity" => Ok(AttackKind::Identity),
        _ => Err(bad(key, value, "expected fgsm, salt_pepper, single_pixel, resample or identity")),
    }
}

/// Splits config text into raw `section.key -> value` pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("config line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim();
        let key = match (&section, k.contains('.')) {
            (Some(s), false) => format!("{s}.{k}"),
            _ => k.to_string(),
        };
        if !SCHEMA.iter().any(|(name, _)| *name == key) {
            return Err(CliError::Validation(format!("config line {}: unknown key `{key}`", lineno + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Validation(format!("config line {}: key `{key}` repeated", lineno + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut resolved: BTreeMap<String, String> = SCHEMA.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            if !resolved.contains_key(&k) {
                return Err(CliError::Validation(format!("unknown key `{k}`")));
            }
            resolved.insert(k, v);
        }
        let get = |k: &str| resolved[k].as_str();
        let kind = match get("data.kind") {
            "synthetic" => DataKind::Synthetic,
            "world" => DataKind::World,
            "idx" => DataKind::Idx,
            v => return Err(bad("data.kind", v, "expected synthetic, world or idx")),
        };
        let data = DataSection {
            kind,
            n: scalar("data.n", get("data.n"))?,
            p: scalar("data.p", get("data.p"))?,
            rho: scalar("data.rho", get("data.rho"))?,
            per_coordinate: scalar("data.per_coordinate", get("data.per_coordinate"))?,
            world: ToyWorldConfig {
                p: scalar("data.world_p", get("data.world_p"))?,
                aligned: scalar("data.aligned", get("data.aligned"))?,
                misaligned: scalar("data.misaligned", get("data.misaligned"))?,
                shuffle_blocks: true,
            },
            worlds: scalar("data.worlds", get("data.worlds"))?,
            world_n: scalar("data.world_n", get("data.world_n"))?,
            trials: scalar("data.trials", get("data.trials"))?,
            world_file: path(get("data.world_file")),
            class_file: path(get("data.class_file")),
            train_images: path(get("data.train_images")),
            train_labels: path(get("data.train_labels")),
            test_images: path(get("data.test_images")),
            test_labels: path(get("data.test_labels")),
        };
        let arch_kind = get("model.arch").to_string();
        if arch_kind != "mlp" && arch_kind != "logistic" {
            return Err(bad("model.arch", &arch_kind, "expected mlp or logistic"));
        }
        let learning_rate = match get("train.learning_rate") {
            "auto" => None,
            v => Some(scalar("train.learning_rate", v)?),
        };
        let train = TrainSection {
            methods: list("train.methods", get("train.methods"), |s| s.parse().map_err(|e| bad("train.methods", s, e)))?,
            epochs: scalar("train.epochs", get("train.epochs"))?,
            learning_rate,
            batch_size: scalar("train.batch_size", get("train.batch_size"))?,
            reg_balance: scalar("train.reg_balance", get("train.reg_balance"))?,
            early_stop_patience: scalar("train.early_stop_patience", get("train.early_stop_patience"))?,
            draws: scalar("train.draws", get("train.draws"))?,
        };
        let attack = AttackSection {
            kinds: list("attack.kinds", get("attack.kinds"), |s| attack_kind("attack.kinds", s))?,
            victim: get("attack.victim").parse().map_err(|e| bad("attack.victim", get("attack.victim"), e))?,
            train_kind: attack_kind("attack.train_kind", get("attack.train_kind"))?,
            mask: match get("attack.mask") {
                "auto" => MaskKind::Auto,
                "all" => MaskKind::All,
                "spurious" => MaskKind::Spurious,
                v => return Err(bad("attack.mask", v, "expected auto, all or spurious")),
            },
            epsilon: scalar("attack.epsilon", get("attack.epsilon"))?,
            rate: scalar("attack.rate", get("attack.rate"))?,
            steps: scalar("attack.steps", get("attack.steps"))?,
            lo: scalar("attack.lo", get("attack.lo"))?,
            hi: scalar("attack.hi", get("attack.hi"))?,
        };
        let bounds = BoundsSection {
            delta: scalar("bounds.delta", get("bounds.delta"))?,
            estimator: match get("bounds.estimator") {
                "exact" => Estimator::Exact,
                "search" => Estimator::Search,
                v => return Err(bad("bounds.estimator", v, "expected exact or search")),
            },
            budget: scalar("bounds.budget", get("bounds.budget"))?,
            class_size: scalar("bounds.class_size", get("bounds.class_size"))?,
            targets: list("bounds.targets", get("bounds.targets"), |s| match s {
                "test" => Ok(Target::Test),
                other => attack_kind("bounds.targets", other).map(Target::Adversarial),
            })?,
        };
        let seeds = list("seeds.list", get("seeds.list"), |s| scalar("seeds.list", s))?;
        let cfg = RunConfig {
            data,
            hidden: scalar("model.hidden", get("model.hidden"))?,
            arch_kind,
            train,
            attack,
            bounds,
            out_dir: PathBuf::from(get("output.dir")),
            emit_svg: scalar("output.emit_svg", get("output.emit_svg"))?,
            seeds,
            resolved: resolved.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let v = |msg: String| Err(CliError::Validation(msg));
        if self.data.kind == DataKind::Synthetic {
            let sc = self.synthetic(0);
            sc.validate()?;
        }
        if self.data.kind == DataKind::World {
            self.data.world.validate()?;
            if self.data.worlds == 0 || self.data.world_n == 0 || self.data.trials == 0 {
                return v("data.worlds, data.world_n and data.trials must be at least 1".into());
            }
            if self.data.world_file.is_some() != self.data.class_file.is_some() {
                return v("data.world_file and data.class_file go together".into());
            }
        }
        if self.data.kind == DataKind::Idx {
            for (k, p) in [
                ("data.train_images", &self.data.train_images),
                ("data.train_labels", &self.data.train_labels),
                ("data.test_images", &self.data.test_images),
                ("data.test_labels", &self.data.test_labels),
            ] {
                match p {
                    None => return v(format!("{k} is required for idx data")),
                    Some(p) if !p.exists() => return v(format!("{k}: {} does not exist", p.display())),
                    _ => {}
                }
            }
        }
        if self.arch_kind == "mlp" && self.hidden == 0 {
            return v("model.hidden must be at least 1".into());
        }
        self.train_config(0).validate()?;
        if !(self.train.reg_balance >= 0.0) {
            return v("train.reg_balance must be non-negative".into());
        }
        if self.train.draws == 0 {
            return v("train.draws must be at least 1".into());
        }
        if !(self.bounds.delta > 0.0 && self.bounds.delta <= 1.0) {
            return v("bounds.delta must lie in (0, 1]".into());
        }
        if self.bounds.budget == 0 {
            return v("bounds.budget must be at least 1".into());
        }
        if self.bounds.estimator == Estimator::Exact && self.data.kind != DataKind::World {
            return v("bounds.estimator = exact needs data.kind = world".into());
        }
        if self.attack.mask == MaskKind::Spurious && self.data.kind != DataKind::Synthetic {
            return v("attack.mask = spurious needs synthetic data".into());
        }
        if !(self.attack.lo <= self.attack.hi) {
            return v("attack.lo must not exceed attack.hi".into());
        }
        Ok(())
    }

    /// Overrides the seed list with a single seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.resolved.insert("seeds.list".into(), seed.to_string());
        self
    }

    pub fn with_out_dir(mut self, dir: PathBuf) -> Self {
        self.resolved.insert("output.dir".into(), dir.display().to_string());
        self.out_dir = dir;
        self
    }

    /// Canonical text of the resolved config, with list items trimmed. The
    /// output directory is left out so relocating a run keeps its hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, _) in SCHEMA {
            if *k == "output.dir" {
                continue;
            }
            let value: Vec<&str> = self.resolved[*k].split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            s.push_str(&format!("{k} = {}\n", value.join(",")));
        }
        s
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn arch(&self, input_dim: usize) -> Architecture {
        match self.arch_kind.as_str() {
            "logistic" => Architecture::logistic(input_dim),
            _ => Architecture::mlp(input_dim, self.hidden),
        }
    }

    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig { n: self.data.n, p: self.data.p, rho: self.data.rho, seed, per_coordinate: self.data.per_coordinate }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = TrainConfig::for_arch(&self.arch(1));
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.train.batch_size,
            seed,
            reg_balance: self.train.reg_balance,
            early_stop_patience: self.train.early_stop_patience,
        }
    }

    /// The attack box and mask for inputs of dimension `p`.
    pub fn perturb_spec(&self, p: usize) -> PerturbSpec {
        let mask = match self.attack.mask {
            MaskKind::Auto if self.data.kind == DataKind::Synthetic => self.synthetic(0).spurious_block(),
            MaskKind::Auto | MaskKind::All => (0..p).collect(),
            MaskKind::Spurious => self.synthetic(0).spurious_block(),
        };
        PerturbSpec::masked(mask, p, self.attack.lo, self.attack.hi)
            .with_epsilon(self.attack.epsilon)
            .with_rate(self.attack.rate)
            .with_steps(self.attack.steps)
    }
}
