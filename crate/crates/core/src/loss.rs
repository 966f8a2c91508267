//! Per-sample losses and empirical risk.
//!
//! Bound quantities use the zero-one loss; training uses the logistic
//! (binary cross-entropy) surrogate. Hard labels round the predicted
//! probability with ties going to 1.

use crate::data::Label;
use crate::error::{invalid, Error, Result};

/// Clamp applied to predictions before taking logarithms.
pub const LOGISTIC_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Logistic,
}

pub fn hard_label(prediction: f64) -> Label {
    Label::from_bool(prediction >= 0.5)
}

pub fn loss(kind: LossKind, prediction: f64, y: Label) -> Result<f64> {
    if !(0.0..=1.0).contains(&prediction) {
        return Err(invalid(format!("prediction {prediction} outside [0, 1]")));
    }
    Ok(loss_unchecked(kind, prediction, y))
}

pub(crate) fn loss_unchecked(kind: LossKind, prediction: f64, y: Label) -> f64 {
    match kind {
        LossKind::ZeroOne => (hard_label(prediction) != y) as u8 as f64,
        LossKind::Logistic => {
            let p = prediction.clamp(LOGISTIC_CLAMP, 1.0 - LOGISTIC_CLAMP);
            if y == Label::ONE {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        }
    }
}

/// Mean per-sample loss.
pub fn empirical_risk(predictions: &[f64], labels: &[Label], kind: LossKind) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension { expected: predictions.len(), got: labels.len() });
    }
    if predictions.is_empty() {
        return Err(invalid("empirical risk of an empty sample"));
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        total += loss(kind, p, y)?;
    }
    Ok(total / predictions.len() as f64)
}
