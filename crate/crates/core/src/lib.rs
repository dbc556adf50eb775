//! Distribution-matching image encoder and transfer protocols.
//!
//! The library trains a small convolutional encoder to map images onto
//! per-class Gaussian components of a fixed prototype mixture by minimizing
//! the closed-form 2-Wasserstein distance, then reuses the frozen geometry
//! to classify a shifted target domain zero-shot or after few-shot
//! fine-tuning. A paired synthetic benchmark generator provides two domains
//! with a controlled appearance shift for end-to-end evaluation.

pub mod augment;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod gaussian;
pub mod protocol;
pub mod prototype;
pub mod synthdata;

pub use augment::{
    augment_finetune, augment_pretrain, hflip, spatial_mixup, spatial_mixup_along, ClassPools,
    Image, MixAxis,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMode};
pub use encoder::{
    adam_step, ce_loss, ce_loss_and_grad, ddt_loss, ddt_loss_and_grad, encode, finite_diff_check,
    finite_diff_check_ce, forward_raw, init_encoder, AdamState, Arch, Batch, ConvSpec,
    EncoderParams, GradCheckReport, VARIANCE_EPS,
};
pub use error::{Error, Result};
pub use gaussian::{w2_diag_identity, w2_full, w2_grad, FullGaussian, GaussianEmbedding};
pub use protocol::{
    classify, evaluate, fewshot_sweep, finetune, history_to_csv, pretrain, sample_shots,
    ClassDistances, EarlyStop, EpochStats, Metrics, PlateauScheduler, SweepRow, SweepSummary,
    SweepTable, TrainConfig, IMPROVE_EPS, W_FLOOR,
};
pub use prototype::PrototypeDistribution;
pub use synthdata::{
    generate_domain, load_dataset, read_ppm, write_dataset, write_ppm, ArtifactKind, Dataset,
    DomainSpec, LabeledSample, Split, Style,
};
