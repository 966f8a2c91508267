//! Logistic regression and a one-hidden-layer tanh perceptron with analytic
//! gradients, an explicit encoder/decoder split, and binary checkpoints.
//!
//! Parameter layout is layer by layer, weights before biases:
//!
//! * logistic: `w[0..p], b`
//! * mlp: `W1[h * p] (row j holds hidden unit j's input weights), b1[h],
//!   w2[h], b2`
//!
//! The encoder of a logistic model is the identity, so anything that
//! regularizes representations acts on raw inputs there and has no encoder
//! parameters to move.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Label;
use crate::error::{format_err, invalid, Error, Result};
use crate::loss::{loss_unchecked, LossKind};
use crate::rng::Rng;

/// Anything that maps a feature slice to a probability of label 1.
pub trait Predictor {
    fn dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;

    /// Gradient of the logistic loss at `(x, y)` with respect to `x`, for
    /// predictors that have one.
    fn gradient_wrt_input(&self, _x: &[f64], _y: Label) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Logistic { input_dim: usize },
    Mlp { input_dim: usize, hidden: usize },
}

impl Architecture {
    pub fn logistic(input_dim: usize) -> Self {
        Architecture::Logistic { input_dim }
    }

    pub fn mlp(input_dim: usize, hidden: usize) -> Self {
        Architecture::Mlp { input_dim, hidden }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Architecture::Logistic { input_dim } if input_dim >= 1 => Ok(()),
            Architecture::Mlp { input_dim, hidden } if input_dim >= 1 && hidden >= 1 => Ok(()),
            _ => Err(invalid(format!("architecture {self:?} needs every dimension >= 1"))),
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Logistic { input_dim } | Architecture::Mlp { input_dim, .. } => input_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        match *self {
            Architecture::Logistic { .. } => 0,
            Architecture::Mlp { hidden, .. } => hidden,
        }
    }

    /// Width of the encoder output.
    pub fn representation_dim(&self) -> usize {
        match *self {
            Architecture::Logistic { input_dim } => input_dim,
            Architecture::Mlp { hidden, .. } => hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Logistic { input_dim } => input_dim + 1,
            Architecture::Mlp { input_dim, hidden } => input_dim * hidden + hidden + hidden + 1,
        }
    }

    fn kind_code(&self) -> u8 {
        match self {
            Architecture::Logistic { .. } => 0,
            Architecture::Mlp { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Self {
        ModelParams(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self -= step * grad`.
    pub fn descend(&mut self, grad: &[f64], step: f64) {
        for (p, g) in self.0.iter_mut().zip(grad) {
            *p -= step * g;
        }
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` drawn in layout
/// order, biases zero.
pub fn init_params(arch: &Architecture, rng: &mut Rng) -> ModelParams {
    let mut v = Vec::with_capacity(arch.param_count());
    match *arch {
        Architecture::Logistic { input_dim } => {
            let bound = 1.0 / (input_dim as f64).sqrt();
            v.extend((0..input_dim).map(|_| rng.uniform_range(-bound, bound)));
            v.push(0.0);
        }
        Architecture::Mlp { input_dim, hidden } => {
            let b1 = 1.0 / (input_dim as f64).sqrt();
            v.extend((0..input_dim * hidden).map(|_| rng.uniform_range(-b1, b1)));
            v.extend(std::iter::repeat(0.0).take(hidden));
            let b2 = 1.0 / (hidden as f64).sqrt();
            v.extend((0..hidden).map(|_| rng.uniform_range(-b2, b2)));
            v.push(0.0);
        }
    }
    ModelParams(v)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub prediction: f64,
    pub representation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: ModelParams,
}

impl Model {
    pub fn new(arch: Architecture, params: ModelParams) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension { expected: arch.param_count(), got: params.len() });
        }
        if !params.is_finite() {
            return Err(Error::Numerical("model parameters contain NaN or infinity".into()));
        }
        Ok(Model { arch, params })
    }

    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&arch, rng);
        Ok(Model { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Model::new(arch, ModelParams(vec![0.0; arch.param_count()]))
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Dimension { expected: self.arch.input_dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("input contains NaN or infinity".into()));
        }
        Ok(())
    }

    /// Encoder output `e(x)`.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        match self.arch {
            Architecture::Logistic { .. } => x.to_vec(),
            Architecture::Mlp { input_dim, hidden } => {
                let w = self.params.as_slice();
                let (w1, rest) = w.split_at(input_dim * hidden);
                let b1 = &rest[..hidden];
                (0..hidden)
                    .map(|j| {
                        let row = &w1[j * input_dim..(j + 1) * input_dim];
                        (b1[j] + dot(row, x)).tanh()
                    })
                    .collect()
            }
        }
    }

    /// Decoder logit on a representation.
    pub fn decode_logit(&self, rep: &[f64]) -> f64 {
        let w = self.params.as_slice();
        let h = rep.len();
        let (wd, bd) = (&w[w.len() - h - 1..w.len() - 1], w[w.len() - 1]);
        bd + dot(wd, rep)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let representation = self.encode(x);
        let prediction = sigmoid(self.decode_logit(&representation));
        if prediction.is_nan() {
            return Err(Error::Numerical("forward pass produced NaN".into()));
        }
        Ok(Forward { prediction, representation })
    }

    /// Gradient of the logistic loss at `(x, y)` with respect to the
    /// parameters.
    pub fn backward(&self, x: &[f64], y: Label, kind: LossKind) -> Result<Vec<f64>> {
        if kind != LossKind::Logistic {
            return Err(invalid("the zero-one loss has no gradient"));
        }
        self.check_input(x)?;
        Ok(self.grads(x, y, 1.0, None).0)
    }

    /// Shared backpropagation. `scale` multiplies the loss; `rep_extra` is an
    /// additional upstream gradient on the representation, backpropagated
    /// through the encoder only. Returns parameter and input gradients.
    pub(crate) fn grads(&self, x: &[f64], y: Label, scale: f64, rep_extra: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let target = y.as_f64();
        self.grads_with(x, |p| scale * (p - target), rep_extra)
    }

    /// Backpropagation for an arbitrary upstream derivative with respect to
    /// the output logit, given as a function of the predicted probability.
    pub(crate) fn grads_with(&self, x: &[f64], dlogit: impl Fn(f64) -> f64, rep_extra: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let w = self.params.as_slice();
        let mut g = vec![0.0; w.len()];
        match self.arch {
            Architecture::Logistic { input_dim } => {
                let p = sigmoid(w[input_dim] + dot(&w[..input_dim], x));
                let dz = dlogit(p);
                for i in 0..input_dim {
                    g[i] = dz * x[i];
                }
                g[input_dim] = dz;
                let mut gx: Vec<f64> = w[..input_dim].iter().map(|wi| dz * wi).collect();
                if let Some(extra) = rep_extra {
                    for (a, b) in gx.iter_mut().zip(extra) {
                        *a += b;
                    }
                }
                (g, gx)
            }
            Architecture::Mlp { input_dim, hidden } => {
                let (w1, rest) = w.split_at(input_dim * hidden);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = (&rest[..hidden], rest[hidden]);
                let h: Vec<f64> = (0..hidden)
                    .map(|j| (b1[j] + dot(&w1[j * input_dim..(j + 1) * input_dim], x)).tanh())
                    .collect();
                let p = sigmoid(b2 + dot(w2, &h));
                let dz = dlogit(p);
                let o_w2 = input_dim * hidden + hidden;
                for j in 0..hidden {
                    g[o_w2 + j] = dz * h[j];
                }
                g[o_w2 + hidden] = dz;
                let mut gx = vec![0.0; input_dim];
                for j in 0..hidden {
                    let mut dh = dz * w2[j];
                    if let Some(extra) = rep_extra {
                        dh += extra[j];
                    }
                    let da = dh * (1.0 - h[j] * h[j]);
                    let row = &w1[j * input_dim..(j + 1) * input_dim];
                    for i in 0..input_dim {
                        g[j * input_dim + i] = da * x[i];
                        gx[i] += da * row[i];
                    }
                    g[input_dim * hidden + j] = da;
                }
                (g, gx)
            }
        }
    }

    /// Gradient of the logistic loss with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: Label) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.grads(x, y, 1.0, None).1)
    }

    pub fn loss(&self, x: &[f64], y: Label, kind: LossKind) -> f64 {
        loss_unchecked(kind, self.predict(x), y)
    }
}

impl Predictor for Model {
    fn dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.decode_logit(&self.encode(x)))
    }

    fn gradient_wrt_input(&self, x: &[f64], y: Label) -> Option<Vec<f64>> {
        Some(self.grads(x, y, 1.0, None).1)
    }
}


pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideTarget {
    /// Predict the task label from representations.
    Label,
    /// Predict the auxiliary annotation from representations.
    Annotation,
}

/// A predictor over the main model's representation space, trained to
/// recover the label or an annotation from `e(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    pub model: Model,
    pub target: SideTarget,
}

impl SideModel {
    pub fn new(arch: Architecture, target: SideTarget, rng: &mut Rng) -> Result<Self> {
        Ok(SideModel { model: Model::init(arch, rng)?, target })
    }

    /// Logistic side model sized for `main`'s representation.
    pub fn logistic_for(main: &Architecture, target: SideTarget, rng: &mut Rng) -> Result<Self> {
        SideModel::new(Architecture::logistic(main.representation_dim()), target, rng)
    }

    pub fn check_compatible(&self, main: &Architecture) -> Result<()> {
        if self.model.arch().input_dim() != main.representation_dim() {
            return Err(Error::Dimension { expected: main.representation_dim(), got: self.model.arch().input_dim() });
        }
        Ok(())
    }

    /// Mean logistic loss over `(representation, target)` pairs.
    pub fn mean_loss(&self, reps: &[Vec<f64>], targets: &[Label]) -> f64 {
        reps.iter().zip(targets).map(|(r, &t)| self.model.loss(r, t, LossKind::Logistic)).sum::<f64>() / reps.len() as f64
    }

    /// One gradient step on the mean logistic loss.
    pub fn step(&mut self, reps: &[Vec<f64>], targets: &[Label], lr: f64) {
        let mut acc = vec![0.0; self.model.params().len()];
        for (r, &t) in reps.iter().zip(targets) {
            let (g, _) = self.model.grads(r, t, 1.0, None);
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let m = reps.len() as f64;
        for a in acc.iter_mut() {
            *a /= m;
        }
        self.model.params_mut().descend(&acc, lr);
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HARM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Binary layout: magic `HARM`, u32 version, u8 architecture kind
/// (0 logistic, 1 mlp), u32 input dim, u32 hidden (0 for logistic), u64
/// parameter count, then the parameters as f64. All little-endian.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(25 + 8 * model.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(arch.kind_code());
    out.extend_from_slice(&(arch.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden() as u32).to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for v in model.params().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if r.len() < n {
            return Err(format_err("checkpoint is truncated"));
        }
        let (head, tail) = r.split_at(n);
        r = tail;
        Ok(head)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(format_err("checkpoint magic mismatch"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let kind = take(1)?[0];
    let input_dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let arch = match (kind, hidden) {
        (0, 0) => Architecture::logistic(input_dim),
        (0, h) => return Err(format_err(format!("logistic checkpoint with hidden = {h}"))),
        (1, h) => Architecture::mlp(input_dim, h),
        (k, _) => return Err(format_err(format!("unknown architecture kind {k}"))),
    };
    if count != arch.param_count() as u64 {
        return Err(format_err(format!("parameter count {count} does not match architecture ({})", arch.param_count())));
    }
    let body = take(8 * count as usize)?;
    if !r.is_empty() {
        return Err(format_err("trailing bytes after checkpoint parameters"));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Model::new(arch, ModelParams(params))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}
