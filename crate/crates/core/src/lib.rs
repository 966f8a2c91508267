//! Active sets, misaligned-feature generalization bounds, and robust
//! training methods on small finite worlds and synthetic data.

pub mod activeset;
pub mod attacks;
pub mod bounds;
pub mod data;
pub mod datagen;
pub mod error;
pub mod formats;
pub mod loss;
pub mod models;
pub mod rng;
pub mod train;

pub use activeset::{active_set, perturbation_set, ActiveSet, Domain, LabelingFn, World};
pub use data::{split_dataset, Dataset, FeatureVector, Label, Origin, Sample};
pub use error::{Error, Result};
pub use loss::{empirical_risk, hard_label, loss, LossKind};
pub use models::{Architecture, Model, ModelParams, Predictor, SideModel, SideTarget};
pub use rng::Rng;
