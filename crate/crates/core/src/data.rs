//! Feature vectors, labels, samples and datasets.

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// A fixed-length vector of feature values. Discrete symbols are stored as
/// their integer codes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn from_codes(codes: &[u32]) -> Self {
        FeatureVector(codes.iter().map(|&c| c as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Maximum absolute coordinate difference.
    pub fn linf_distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn hamming_distance(&self, other: &FeatureVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u8);

impl Label {
    pub const ZERO: Label = Label(0);
    pub const ONE: Label = Label(1);

    pub fn new(value: u8) -> Result<Self> {
        match value {
            0 | 1 => Ok(Label(value)),
            v => Err(invalid(format!("label {v} is not binary"))),
        }
    }

    pub fn from_bool(b: bool) -> Self {
        Label(b as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn flipped(self) -> Self {
        Label(1 - self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: FeatureVector,
    pub y: Label,
    /// Partition id used by group-reweighting.
    pub group: Option<u32>,
    /// Auxiliary binary annotation used by annotation-based regularization.
    pub aux: Option<Label>,
}

impl Sample {
    pub fn new(x: FeatureVector, y: Label) -> Self {
        Sample { x, y, group: None, aux: None }
    }

    pub fn with_group(mut self, group: u32) -> Self {
        self.group = Some(group);
        self
    }

    pub fn with_aux(mut self, aux: Label) -> Self {
        self.aux = Some(aux);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Source,
    Target,
}

/// An ordered collection of samples sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    origin: Origin,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, inferring the dimension from the first sample.
    pub fn new(samples: Vec<Sample>, origin: Origin) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.x.len())
            .ok_or_else(|| invalid("dataset needs at least one sample to infer its dimension"))?;
        Dataset::with_dim(dim, samples, origin)
    }

    pub fn with_dim(dim: usize, samples: Vec<Sample>, origin: Origin) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.x.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: s.x.len() });
        }
        Ok(Dataset { samples, origin, dim })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// A copy of the samples under a different origin tag.
    pub fn relabeled(&self, origin: Origin) -> Dataset {
        Dataset { samples: self.samples.clone(), origin, dim: self.dim }
    }

    pub fn all_have_groups(&self) -> bool {
        self.samples.iter().all(|s| s.group.is_some())
    }

    pub fn all_have_aux(&self) -> bool {
        self.samples.iter().all(|s| s.aux.is_some())
    }

    /// Subset by indices, keeping the origin tag.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            origin: self.origin,
            dim: self.dim,
        }
    }
}

/// Shuffles `d` with `rng` and cuts it into consecutive parts whose sizes
/// follow `fractions`. Part boundaries are `round(n * cumulative_fraction)`.
pub fn split_dataset(d: &Dataset, fractions: &[f64], rng: &mut Rng) -> Result<Vec<Dataset>> {
    if d.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions sum to {total}, not 1")));
    }
    let n = d.n();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let mut parts = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((n as f64 * cumulative).round() as usize).clamp(start, n)
        };
        parts.push(d.select(&order[start..end]));
        start = end;
    }
    Ok(parts)
}
