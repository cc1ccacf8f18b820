//! Cut^nMix augmentation and online peer distillation.
//!
//! The crate is organised by training concern:
//!
//! - [`augment`]: base distortion, CutMix and Cut^nMix mix plans
//! - [`losses`]: cross-entropy, KD/DML divergences, feature MMD, peer-teacher loss
//! - [`models`]: peer students, the peer-teacher classifier, checkpoints
//! - [`trainer`]: SGD with Nesterov momentum, step schedule and the training loop
//! - [`datasets`]: CIFAR binary readers and a synthetic desk-scale dataset
//! - [`harness`]: run configuration, evaluation, ablations, plots and the CLI

pub mod augment;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod trainer;

pub use augment::{
    apply_mix_plan, base_distort, cutmix_batch, cutnmix_plan, sample_lambda, sample_rect_mask,
    ImageBatch, MixPlan, MixedBatch, RectMask, SoftLabelBatch,
};
pub use error::{Error, Result};
pub use losses::{DistillConfig, LossParts};
pub use models::{build_student, Arch, PeerStudent, PeerTeacher};
pub use trainer::{lr_at, train, train_step, OptimConfig, TrainConfig, TrainState};

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}
