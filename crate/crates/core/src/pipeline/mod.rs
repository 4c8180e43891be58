//! Bitplane-wise training, sequential recovery and evaluation.

pub mod bundle;
pub mod config;
pub mod evaluate;
pub mod pairs;
pub mod recover;
pub mod train;

pub use bundle::{BundleModels, ModelBundle};
pub use config::{DataSource, LossKind, TrainConfig, TrainJob, TrainMode, TrainTarget};
pub use evaluate::{evaluate, evaluate_with, EvalImage};
pub use pairs::{augment, extract_patches, make_training_pair, Augmentation, PairTarget, TrainingPair};
pub use recover::{recover, recover_stages, recover_with_stages, single_shot_recover, PlanePredictor};
pub use train::{train_all, train_bitplane_network, train_single_shot, TrainingLog};
