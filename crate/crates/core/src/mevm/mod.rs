//! Toy multi-exposure video generator.
//!
//! A small flow-matching transformer that, given clean CRF-encoded latent frames,
//! generates the linear {0, -ev, +ev} exposure latents. Segments are concatenated
//! along time and attention uses axial rotary embeddings whose angles are offset by a
//! gated, learned encoding of (exposure, CRF flag, relative frame index).
//!
//! The latent space is the identity on 2x2-pooled frames plus one constant channel.

pub mod data;
pub mod dit;
pub mod flow;
pub mod layout;
pub mod rope;

pub use data::{pool_latent, ToyDataset, ToySequence};
pub use dit::{RopeMode, ToyConfig, ToyDitParams};
pub use flow::{
    flow_interpolant, fm_loss, sample_loss_grad, toy_eval_loss, toy_sample, toy_sample_from, toy_train, toy_train_from,
    ToyTrainConfig, ToyTrainReport,
};
pub use layout::{concat_layout, ExposureIndex, Layout};
pub use rope::{apply_rotation, exposure_offset, rope_angles, AngleForm, ExposureRopeParams, RopeConfig};
