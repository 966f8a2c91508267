//! Data sources: the synthetic spurious-feature generator, small enumerable
//! worlds with their block-restricted hypothesis classes, and IDX digit
//! files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activeset::{Domain, LabelingFn, World};
use crate::bounds::{disagrees_only_on_active_cylinders, target_covered_by_source, ActiveSetTable, FiniteHypothesisClass};
use crate::data::{Dataset, FeatureVector, Label, Origin, Sample};
use crate::error::{format_err, invalid, Error, Result};
use crate::models::sigmoid;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
    /// Fire the spurious shift independently per coordinate instead of once
    /// per sample.
    pub per_coordinate: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n: 2000, p: 40, rho: 0.9, seed: 0, per_coordinate: false }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.p == 0 || self.p % 4 != 0 {
            return Err(invalid(format!("p = {} must be a positive multiple of 4", self.p)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho = {} outside [0, 1]", self.rho)));
        }
        Ok(())
    }

    /// First coordinate of the spurious block.
    pub fn spurious_start(&self) -> usize {
        3 * self.p / 4
    }

    pub fn spurious_block(&self) -> Vec<usize> {
        (self.spurious_start()..self.p).collect()
    }
}

/// The two effect-size vectors that turn the causal block into a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizes {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl EffectSizes {
    /// Both vectors of length `p / 4` with standard normal entries.
    pub fn draw(p: usize, rng: &mut Rng) -> Self {
        let k = p / 4;
        let beta1 = (0..k).map(|_| rng.normal()).collect();
        let beta2 = (0..k).map(|_| rng.normal()).collect();
        EffectSizes { beta1, beta2 }
    }

    /// Effect sizes tied to a config's seed (stream 0).
    pub fn for_config(cfg: &SyntheticConfig) -> Self {
        EffectSizes::draw(cfg.p, &mut Rng::derive(cfg.seed, 0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

/// One split of the synthetic dataset. The first `3p/4` coordinates are
/// N(0, 1); the label is `𝕀[r1 = r2]` with `r_k ~ Bernoulli(σ(x[..p/4]·β_k))`.
/// On train and val splits the last `p/4` coordinates shift to N(±1, 1),
/// following the label, with probability `rho`; on the test split they stay
/// N(0, 1). Group and annotation record whether the shift fired. Each split
/// draws from its own stream of `cfg.seed`.
pub fn gen_synthetic(cfg: &SyntheticConfig, effects: &EffectSizes, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    let k = cfg.p / 4;
    if effects.beta1.len() != k || effects.beta2.len() != k {
        return Err(Error::Dimension { expected: k, got: effects.beta1.len().min(effects.beta2.len()) });
    }
    let mut rng = Rng::derive(cfg.seed, split.stream());
    let start = cfg.spurious_start();
    let shifted = split != Split::Test;
    let mut samples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut x = vec![0.0; cfg.p];
        for v in &mut x[..start] {
            *v = rng.normal();
        }
        let c1: f64 = x[..k].iter().zip(&effects.beta1).map(|(a, b)| a * b).sum();
        let c2: f64 = x[..k].iter().zip(&effects.beta2).map(|(a, b)| a * b).sum();
        let r1 = rng.bernoulli(sigmoid(c1));
        let r2 = rng.bernoulli(sigmoid(c2));
        let y = Label::from_bool(r1 == r2);
        let mean = if y == Label::ONE { 1.0 } else { -1.0 };
        let mut fired = false;
        if cfg.per_coordinate {
            for v in &mut x[start..] {
                let f = shifted && rng.bernoulli(cfg.rho);
                fired |= f;
                *v = rng.normal() + if f { mean } else { 0.0 };
            }
        } else {
            fired = shifted && rng.bernoulli(cfg.rho);
            for v in &mut x[start..] {
                *v = rng.normal() + if fired { mean } else { 0.0 };
            }
        }
        let flag = Label::from_bool(fired);
        samples.push(Sample::new(FeatureVector::new(x), y).with_group(flag.value() as u32).with_aux(flag));
    }
    Dataset::with_dim(cfg.p, samples, Origin::Source)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyWorldConfig {
    /// Binary coordinates, at most 10.
    pub p: usize,
    pub aligned: usize,
    pub misaligned: usize,
    /// Place the blocks at random coordinates instead of `0..aligned` and
    /// the next `misaligned` coordinates.
    pub shuffle_blocks: bool,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig { p: 6, aligned: 2, misaligned: 2, shuffle_blocks: true }
    }
}

impl ToyWorldConfig {
    pub const MAX_P: usize = 10;
    pub const MAX_BLOCK: usize = 3;

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p > Self::MAX_P {
            return Err(invalid(format!("p = {} outside 1..={}", self.p, Self::MAX_P)));
        }
        for (name, k) in [("aligned", self.aligned), ("misaligned", self.misaligned)] {
            if k == 0 || k > Self::MAX_BLOCK {
                return Err(invalid(format!("{name} block size {k} outside 1..={}", Self::MAX_BLOCK)));
            }
        }
        if self.aligned + self.misaligned > self.p {
            return Err(invalid("blocks do not fit in p coordinates"));
        }
        Ok(())
    }
}

/// A generated world with its hypothesis class.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub world: World,
    pub class: FiniteHypothesisClass,
    /// Distinct block-restricted functions before the realized-hypothesis
    /// filter.
    pub enumerated: usize,
}

/// Every function of `block` with truth table `tt` (bit `j` is the output on
/// the block pattern whose bit `i` is the `i`-th block coordinate).
fn block_fn(domain: &Domain, block: &[usize], tt: u64) -> LabelingFn {
    LabelingFn::from_fn(domain, |c| {
        let idx: usize = block.iter().enumerate().map(|(j, &b)| (c[b] as usize) << j).sum();
        (tt >> idx) & 1 == 1
    })
}

/// Builds a world on `{0,1}^p` with `f_h` and `f_m` drawn uniformly from the
/// non-constant functions of their blocks. The class holds every distinct
/// function of either block that satisfies the realized-hypothesis
/// assumption over the whole domain; `f_h`, its complement and `f_m` always
/// survive.
pub fn make_toy_world(cfg: &ToyWorldConfig, rng: &mut Rng) -> Result<ToyWorld> {
    cfg.validate()?;
    let domain = Domain::binary(cfg.p)?;
    for _ in 0..50 {
        let mut coords: Vec<usize> = (0..cfg.p).collect();
        if cfg.shuffle_blocks {
            rng.shuffle(&mut coords);
        }
        let aligned: Vec<usize> = coords[..cfg.aligned].to_vec();
        let misaligned: Vec<usize> = coords[cfg.aligned..cfg.aligned + cfg.misaligned].to_vec();
        let draw = |k: usize, rng: &mut Rng| 1 + rng.below((1u64 << (1 << k)) - 2);
        let f_h = block_fn(&domain, &aligned, draw(cfg.aligned, rng));
        let f_m = block_fn(&domain, &misaligned, draw(cfg.misaligned, rng));
        let world = match World::new(f_h, f_m, aligned.clone(), misaligned.clone()) {
            Ok(w) => w,
            Err(Error::Precondition(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut members: Vec<LabelingFn> = Vec::new();
        for (block, k) in [(&aligned, cfg.aligned), (&misaligned, cfg.misaligned)] {
            for tt in 0..(1u64 << (1 << k)) {
                let f = block_fn(&domain, block, tt);
                if !members.contains(&f) {
                    members.push(f);
                }
            }
        }
        let enumerated = members.len();
        let table = ActiveSetTable::new(&world);
        let mut kept = Vec::with_capacity(members.len());
        for f in members {
            if disagrees_only_on_active_cylinders(&f, &world, &table)? {
                kept.push(f);
            }
        }
        let class = FiniteHypothesisClass::new(kept)?;
        for (name, f) in [("f_h", world.f_h().clone()), ("1 - f_h", world.f_h().complement()), ("f_m", world.f_m().clone())] {
            if !class.contains(&f) {
                return Err(Error::Precondition(format!("{name} failed the realized-hypothesis filter")));
            }
        }
        return Ok(ToyWorld { world, class, enumerated });
    }
    Err(Error::Precondition("no valid world within 50 attempts".into()))
}

fn labeled(world: &World, index: usize) -> Sample {
    Sample::new(world.domain().point(index), Label::from_bool(world.f_h().at(index) == 1))
}

/// `n` draws, with replacement, uniform over the source support, labeled by
/// `f_h`.
pub fn sample_source(world: &World, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let support = world.support();
    let samples = (0..n).map(|_| labeled(world, support[rng.below(support.len() as u64) as usize])).collect();
    Dataset::with_dim(world.domain().dim(), samples, Origin::Source)
}

/// `n` draws uniform over the points that match some source point `z` on the
/// active set of `f_h` at `z`, labeled by `f_h`.
pub fn sample_a4_target(world: &World, src: &Dataset, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let d = world.domain();
    let table = ActiveSetTable::new(world);
    let src_codes: Vec<Vec<u32>> = src.iter().map(|s| d.codes_of(&s.x)).collect::<Result<_>>()?;
    let candidates: Vec<usize> = (0..d.size())
        .filter(|&i| {
            let xc = d.codes(i);
            src_codes.iter().any(|zc| table.f_h[d.encode(zc)].indices.iter().all(|&k| xc[k] == zc[k]))
        })
        .collect();
    if candidates.is_empty() {
        return Err(invalid("no target point is covered by the source sample"));
    }
    let samples = (0..n).map(|_| labeled(world, candidates[rng.below(candidates.len() as u64) as usize])).collect();
    let tgt = Dataset::with_dim(d.dim(), samples, Origin::Target)?;
    debug_assert!(target_covered_by_source(world, src, &tgt, &table).unwrap_or(false));
    Ok(tgt)
}

/// `n` draws uniform over the whole domain, labeled by `f_h`.
pub fn sample_uniform_target(world: &World, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let size = world.domain().size() as u64;
    let samples = (0..n).map(|_| labeled(world, rng.below(size) as usize)).collect();
    Dataset::with_dim(world.domain().dim(), samples, Origin::Target)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(format!("{what}: truncated header")))
}

/// Parses IDX image and label buffers, keeping digits 0 and 1 with pixels
/// scaled to `[0, 1]`, in file order.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(format!("images: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(format!("labels: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if count != label_count {
        return Err(format_err(format!("{count} images but {label_count} labels")));
    }
    let p = rows * cols;
    if p == 0 {
        return Err(format_err("images have zero pixels"));
    }
    if images.len() != 16 + count * p {
        return Err(format_err(format!("images: expected {} bytes, found {}", 16 + count * p, images.len())));
    }
    if labels.len() != 8 + count {
        return Err(format_err(format!("labels: expected {} bytes, found {}", 8 + count, labels.len())));
    }
    let mut samples = Vec::new();
    for i in 0..count {
        let digit = labels[8 + i];
        if digit > 1 {
            continue;
        }
        let px = &images[16 + i * p..16 + (i + 1) * p];
        let x = px.iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(Sample::new(FeatureVector::new(x), Label::from_bool(digit == 1)));
    }
    Dataset::with_dim(p, samples, Origin::Source)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Serializes images and labels in IDX format.
pub fn idx_bytes(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if images.len() != labels.len() {
        return Err(invalid("image and label counts differ"));
    }
    if images.iter().any(|im| im.len() != rows * cols) {
        return Err(invalid("image size does not match rows × cols"));
    }
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    Ok((img, lab))
}
