//! Factorization machines and neural factorization machines for sparse
//! regression, with hand-written backpropagation and Adagrad training.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: libfm parsing, splitting and negative sampling
//! - [`encode`]: one-hot encoding of raw categorical logs
//! - [`fm`]: the factorization machine scorer and its gradients
//! - [`nfm`]: embedding, pooling, hidden layers, batch norm, dropout and the
//!   backward pass
//! - [`trainer`]: mini-batch Adagrad with early stopping
//! - [`eval`], [`checkpoint`], [`experiments`]: scoring, persistence and
//!   experiment presets

pub mod checkpoint;
pub mod data;
pub mod encode;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fm;
pub mod linalg;
pub mod nfm;
pub mod rng;
pub mod trainer;

pub use data::{negative_sample, parse_libfm, split, Dataset, SparseInstance, SplitSpec};
pub use error::{Error, Result};
pub use eval::{count_parameters, evaluate_rmse, Model};
pub use fm::{fm_gradients, fm_score, FmParams};
pub use nfm::{nfm_backward, nfm_forward, Activation, Mode, NfmParams, PoolingKind};
pub use trainer::{
    fm_train, nfm_train, pretrain_embeddings, squared_loss, EpochReport, TrainConfig,
};
