//! Modal-adversarial hybrid transfer network (MHTN) for cross-modal retrieval.
//!
//! Layout:
//! - [`autodiff`]: dense matrices, a reverse-mode tape and SGD parameter groups
//! - [`losses`]: the five loss terms and their combination
//! - [`network`]: the star-shaped network, forward passes and checkpoints
//! - [`trainer`]: document assembly and the training loop
//! - [`eval`]: cosine ranking, MAP and PR curves
//! - [`data`]: feature files, manifests, splits and the synthetic benchmark

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod network;
pub mod trainer;

pub use autodiff::{DenseMatrix, ParamGroup, Tape, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{evaluate_all, evaluate_task, EmbeddedSet, TaskMatrix};
pub use losses::{LossBundle, LossWeights};
pub use network::{Ablation, NetworkConfig, StarNetwork};
pub use trainer::{train, train_step, TrainSchedule};
