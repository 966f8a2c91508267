//! Exact per-sample quantities over small discrete domains: the active set
//! of a labeling function, the function difference, the dependence term, and
//! the misaligned-feature perturbation set.
//!
//! Every operation here enumerates (a slice of) the domain, so domains are
//! capped at [`MAX_DOMAIN`] points. Predictors are hard-labeled truth tables;
//! tabulate a probabilistic model with [`LabelingFn::tabulate`] first.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{FeatureVector, Label};
use crate::error::{format_err, invalid, Error, Result};
use crate::models::Predictor;

/// Largest domain any exhaustive operation will enumerate.
pub const MAX_DOMAIN: usize = 1 << 20;

/// A product of finite per-coordinate alphabets `{0, .., size-1}`.
///
/// Points are indexed in row-major order with coordinate 0 varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    alphabets: Vec<u32>,
    strides: Vec<usize>,
    size: usize,
}

impl Domain {
    pub fn new(alphabets: Vec<u32>) -> Result<Self> {
        if alphabets.is_empty() {
            return Err(invalid("domain needs at least one coordinate"));
        }
        if alphabets.iter().any(|&a| a == 0) {
            return Err(invalid("alphabet sizes must be positive"));
        }
        let size: u128 = alphabets.iter().map(|&a| a as u128).product();
        if size > MAX_DOMAIN as u128 {
            return Err(Error::DomainTooLarge { size, cap: MAX_DOMAIN });
        }
        let mut strides = Vec::with_capacity(alphabets.len());
        let mut s = 1usize;
        for &a in &alphabets {
            strides.push(s);
            s *= a as usize;
        }
        Ok(Domain { alphabets, strides, size: size as usize })
    }

    pub fn binary(p: usize) -> Result<Self> {
        Domain::new(vec![2; p])
    }

    pub fn dim(&self) -> usize {
        self.alphabets.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn alphabets(&self) -> &[u32] {
        &self.alphabets
    }

    pub fn decode(&self, mut index: usize, out: &mut [u32]) {
        for (o, &a) in out.iter_mut().zip(&self.alphabets) {
            *o = (index % a as usize) as u32;
            index /= a as usize;
        }
    }

    pub fn codes(&self, index: usize) -> Vec<u32> {
        let mut out = vec![0; self.dim()];
        self.decode(index, &mut out);
        out
    }

    pub fn encode(&self, codes: &[u32]) -> usize {
        codes.iter().zip(&self.strides).map(|(&c, &s)| c as usize * s).sum()
    }

    /// Validates a feature vector as a point of this domain.
    pub fn index_of(&self, x: &FeatureVector) -> Result<usize> {
        Ok(self.encode(&self.codes_of(x)?))
    }

    pub fn codes_of(&self, x: &FeatureVector) -> Result<Vec<u32>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        x.as_slice()
            .iter()
            .zip(&self.alphabets)
            .enumerate()
            .map(|(i, (&v, &a))| {
                if v.fract() == 0.0 && v >= 0.0 && v < a as f64 {
                    Ok(v as u32)
                } else {
                    Err(invalid(format!("coordinate {i} value {v} is not in alphabet 0..{a}")))
                }
            })
            .collect()
    }

    pub fn point(&self, index: usize) -> FeatureVector {
        FeatureVector::from_codes(&self.codes(index))
    }

    /// Number of points obtained by freeing `coords`.
    pub fn cylinder_size(&self, coords: &[usize]) -> u128 {
        coords.iter().map(|&i| self.alphabets[i] as u128).product()
    }

    /// Indices of every point that agrees with `base` off `free`; `free`
    /// coordinates range over their alphabets. Includes `base` itself.
    pub fn vary(&self, base: &[u32], free: &[usize]) -> Result<Vec<usize>> {
        let count = self.cylinder_size(free);
        if count > MAX_DOMAIN as u128 {
            return Err(Error::DomainTooLarge { size: count, cap: MAX_DOMAIN });
        }
        let base_index = self.encode(base);
        let base_part: usize = free.iter().map(|&i| base[i] as usize * self.strides[i]).sum();
        let anchor = base_index - base_part;
        let mut out = Vec::with_capacity(count as usize);
        let mut counter = vec![0u32; free.len()];
        loop {
            let offset: usize = free.iter().zip(&counter).map(|(&i, &c)| c as usize * self.strides[i]).sum();
            out.push(anchor + offset);
            // odometer, first free coordinate fastest
            let mut k = 0;
            loop {
                if k == free.len() {
                    return Ok(out);
                }
                counter[k] += 1;
                if counter[k] < self.alphabets[free[k]] {
                    break;
                }
                counter[k] = 0;
                k += 1;
            }
        }
    }

    fn complement_of(&self, coords: &[usize]) -> Vec<usize> {
        (0..self.dim()).filter(|i| !coords.contains(i)).collect()
    }
}

/// A total binary function over a [`Domain`], stored as a truth table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelingFn {
    domain: Domain,
    table: Vec<u8>,
}

impl LabelingFn {
    pub fn from_table(domain: Domain, table: Vec<u8>) -> Result<Self> {
        if table.len() != domain.size() {
            return Err(Error::Dimension { expected: domain.size(), got: table.len() });
        }
        if table.iter().any(|&b| b > 1) {
            return Err(invalid("truth table entries must be 0 or 1"));
        }
        Ok(LabelingFn { domain, table })
    }

    pub fn from_fn(domain: &Domain, f: impl Fn(&[u32]) -> bool) -> Self {
        let mut codes = vec![0; domain.dim()];
        let table = (0..domain.size())
            .map(|i| {
                domain.decode(i, &mut codes);
                f(&codes) as u8
            })
            .collect();
        LabelingFn { domain: domain.clone(), table }
    }

    /// Hard-labels a probabilistic predictor on every domain point.
    pub fn tabulate(domain: &Domain, predictor: &dyn Predictor) -> Self {
        LabelingFn::from_fn(domain, |c| {
            let x: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            predictor.predict(&x) >= 0.5
        })
    }

    pub fn constant(domain: &Domain, value: Label) -> Self {
        LabelingFn { domain: domain.clone(), table: vec![value.value(); domain.size()] }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn table(&self) -> &[u8] {
        &self.table
    }

    #[inline]
    pub fn at(&self, index: usize) -> u8 {
        self.table[index]
    }

    pub fn label(&self, x: &FeatureVector) -> Result<Label> {
        Ok(Label::from_bool(self.table[self.domain.index_of(x)?] == 1))
    }

    pub fn complement(&self) -> Self {
        LabelingFn { domain: self.domain.clone(), table: self.table.iter().map(|b| 1 - b).collect() }
    }

    pub fn is_constant(&self) -> bool {
        self.table.windows(2).all(|w| w[0] == w[1])
    }

    /// True if the output never changes when only coordinates outside
    /// `block` change.
    pub fn depends_only_on(&self, block: &[usize]) -> bool {
        let d = &self.domain;
        let mut codes = vec![0; d.dim()];
        for i in 0..d.size() {
            d.decode(i, &mut codes);
            for j in d.complement_of(block) {
                let mut z = codes.clone();
                z[j] = 0;
                if self.table[d.encode(&z)] != self.table[i] {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_bitstring(&self) -> String {
        self.table.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(domain: Domain, bits: &str) -> Result<Self> {
        let table = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(format_err(format!("unexpected truth-table character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelingFn::from_table(domain, table)
    }
}

impl Predictor for LabelingFn {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Inputs are rounded to the nearest symbol code and clamped into the
    /// alphabet.
    fn predict(&self, x: &[f64]) -> f64 {
        let codes: Vec<u32> = x
            .iter()
            .zip(self.domain.alphabets())
            .map(|(&v, &a)| (v.round().max(0.0) as u32).min(a - 1))
            .collect();
        self.table[self.domain.encode(&codes)] as f64
    }
}

/// The coordinates a labeling function needs to keep its output at a point,
/// together with the minimizing witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub witness: Vec<u32>,
}

/// Minimum-agreement witness search. Among all `z` with `f(z) = f(x)`, picks
/// the one matching `x` on the fewest coordinates; ties go to the
/// lexicographically smallest code tuple (coordinate 0 most significant).
pub fn active_set(f: &LabelingFn, x: &FeatureVector) -> Result<ActiveSet> {
    let d = f.domain();
    let xc = d.codes_of(x)?;
    Ok(active_set_at(f, &xc))
}

pub(crate) fn active_set_at(f: &LabelingFn, xc: &[u32]) -> ActiveSet {
    let d = f.domain();
    let target = f.at(d.encode(xc));
    let mut z = vec![0; d.dim()];
    let mut best: Option<(usize, Vec<u32>)> = None;
    for i in 0..d.size() {
        if f.at(i) != target {
            continue;
        }
        d.decode(i, &mut z);
        let matches = z.iter().zip(xc).filter(|(a, b)| a == b).count();
        let better = match &best {
            None => true,
            Some((m, w)) => matches < *m || (matches == *m && z < *w),
        };
        if better {
            best = Some((matches, z.clone()));
        }
    }
    // x itself always qualifies, so a witness exists.
    let (_, witness) = best.expect("x is its own candidate");
    let indices = (0..d.dim()).filter(|&i| witness[i] == xc[i]).collect();
    ActiveSet { indices, witness }
}

fn check_same_domain(a: &LabelingFn, b: &LabelingFn) -> Result<()> {
    if a.domain() != b.domain() {
        return Err(invalid("labeling functions live on different domains"));
    }
    Ok(())
}

/// Largest disagreement between `theta` and `f` over all points that agree
/// with `x` on the active set of `f` at `x`.
pub fn fn_difference(theta: &LabelingFn, f: &LabelingFn, x: &FeatureVector) -> Result<u8> {
    check_same_domain(theta, f)?;
    let xc = f.domain().codes_of(x)?;
    let a = active_set_at(f, &xc);
    fn_difference_at(theta, f, &xc, &a.indices)
}

pub(crate) fn fn_difference_at(theta: &LabelingFn, f: &LabelingFn, xc: &[u32], active: &[usize]) -> Result<u8> {
    let d = f.domain();
    let free = d.complement_of(active);
    let pts = d.vary(xc, &free)?;
    Ok(pts.iter().any(|&i| theta.at(i) != f.at(i)) as u8)
}

/// 1 iff some assignment of the active-set coordinates (everything else held
/// at `x`) moves `theta` away from `y`.
pub fn dependence_r(theta: &LabelingFn, a: &ActiveSet, x: &FeatureVector, y: Label) -> Result<u8> {
    let d = theta.domain();
    let xc = d.codes_of(x)?;
    if let Some(&bad) = a.indices.iter().find(|&&i| i >= d.dim()) {
        return Err(invalid(format!("active index {bad} outside dimension {}", d.dim())));
    }
    dependence_r_at(theta, &a.indices, &xc, y)
}

pub(crate) fn dependence_r_at(theta: &LabelingFn, active: &[usize], xc: &[u32], y: Label) -> Result<u8> {
    let pts = theta.domain().vary(xc, active)?;
    Ok(pts.iter().any(|&i| theta.at(i) != y.value()) as u8)
}

/// A finite world: an enumerable domain, the human-aligned and misaligned
/// labeling functions, their disjoint coordinate blocks, and the source
/// support where the two agree.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    domain: Domain,
    f_h: LabelingFn,
    f_m: LabelingFn,
    support: Vec<usize>,
    aligned_block: Vec<usize>,
    misaligned_block: Vec<usize>,
}

impl World {
    /// Checks block disjointness and that each labeling function reads only
    /// its own block.
    pub fn new(f_h: LabelingFn, f_m: LabelingFn, aligned_block: Vec<usize>, misaligned_block: Vec<usize>) -> Result<Self> {
        let w = World::new_unchecked(f_h, f_m, aligned_block, misaligned_block)?;
        let problems = w.assumption_failures();
        if !problems.is_empty() {
            return Err(Error::Precondition(problems.join("; ")));
        }
        Ok(w)
    }

    /// Structural checks only (shapes, index ranges). Use
    /// [`World::assumption_failures`] to audit the rest.
    pub fn new_unchecked(
        f_h: LabelingFn,
        f_m: LabelingFn,
        mut aligned_block: Vec<usize>,
        mut misaligned_block: Vec<usize>,
    ) -> Result<Self> {
        check_same_domain(&f_h, &f_m)?;
        let domain = f_h.domain().clone();
        aligned_block.sort_unstable();
        aligned_block.dedup();
        misaligned_block.sort_unstable();
        misaligned_block.dedup();
        for &i in aligned_block.iter().chain(&misaligned_block) {
            if i >= domain.dim() {
                return Err(invalid(format!("block index {i} outside dimension {}", domain.dim())));
            }
        }
        let support = (0..domain.size()).filter(|&i| f_h.at(i) == f_m.at(i)).collect();
        Ok(World { domain, f_h, f_m, support, aligned_block, misaligned_block })
    }

    pub fn assumption_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.aligned_block.iter().any(|i| self.misaligned_block.contains(i)) {
            out.push("aligned and misaligned blocks overlap".to_string());
        }
        if !self.f_h.depends_only_on(&self.aligned_block) {
            out.push("f_h reads coordinates outside the aligned block".to_string());
        }
        if !self.f_m.depends_only_on(&self.misaligned_block) {
            out.push("f_m reads coordinates outside the misaligned block".to_string());
        }
        if self.f_h == self.f_m {
            out.push("f_m equals f_h".to_string());
        }
        if self.support.is_empty() {
            out.push("source support is empty".to_string());
        }
        out
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn f_h(&self) -> &LabelingFn {
        &self.f_h
    }

    pub fn f_m(&self) -> &LabelingFn {
        &self.f_m
    }

    /// Domain indices where `f_h = f_m`.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn in_support(&self, index: usize) -> bool {
        self.f_h.at(index) == self.f_m.at(index)
    }

    pub fn aligned_block(&self) -> &[usize] {
        &self.aligned_block
    }

    pub fn misaligned_block(&self) -> &[usize] {
        &self.misaligned_block
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "# harm world v1").unwrap();
        writeln!(s, "p = {}", self.domain.dim()).unwrap();
        let alph: Vec<String> = self.domain.alphabets().iter().map(|a| a.to_string()).collect();
        writeln!(s, "alphabets = {}", alph.join(",")).unwrap();
        writeln!(s, "aligned = {}", join(&self.aligned_block)).unwrap();
        writeln!(s, "misaligned = {}", join(&self.misaligned_block)).unwrap();
        writeln!(s, "f_h = {}", self.f_h.to_bitstring()).unwrap();
        writeln!(s, "f_m = {}", self.f_m.to_bitstring()).unwrap();
        s
    }

    /// Parses the text format written by [`World::to_text`]. Assumptions are
    /// not checked here.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(format!("world line {}: expected key = value", lineno + 1)))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(format_err(format!("world key {} repeated", k.trim())));
            }
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| format_err(format!("world file missing `{k}`")));
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|t| t.trim().parse().map_err(|_| format_err(format!("bad index {t:?} in `{k}`"))))
                .collect()
        };
        for k in fields.keys() {
            if !["p", "alphabets", "aligned", "misaligned", "f_h", "f_m"].contains(&k.as_str()) {
                return Err(format_err(format!("unknown world key `{k}`")));
            }
        }
        let p: usize = get("p")?.parse().map_err(|_| format_err("bad `p`"))?;
        let alphabets: Vec<u32> = get("alphabets")?
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| format_err(format!("bad alphabet size {t:?}"))))
            .collect::<Result<_>>()?;
        if alphabets.len() != p {
            return Err(format_err(format!("p = {p} but {} alphabet sizes given", alphabets.len())));
        }
        let domain = Domain::new(alphabets)?;
        let f_h = LabelingFn::from_bitstring(domain.clone(), get("f_h")?)?;
        let f_m = LabelingFn::from_bitstring(domain, get("f_m")?)?;
        World::new_unchecked(f_h, f_m, list("aligned")?, list("misaligned")?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        World::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Every point that agrees with `x` off the active set of `f_m` at `x` and
/// ranges over all symbols on it. `x` itself is included.
pub fn perturbation_set<'w>(world: &'w World, x: &FeatureVector) -> Result<impl Iterator<Item = FeatureVector> + 'w> {
    let d = world.domain();
    let xc = d.codes_of(x)?;
    let a = active_set_at(world.f_m(), &xc);
    let pts = d.vary(&xc, &a.indices)?;
    Ok(pts.into_iter().map(move |i| d.point(i)))
}
