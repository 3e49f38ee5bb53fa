//! Gradient-level analysis of training under label noise: NTK-parameterized
//! fully connected networks with exact per-sample gradients, label-corrupted
//! datasets with ground-truth bookkeeping, clean-versus-noisy gradient
//! dominance measurements, angle-transfer theory checks and an instrumented
//! gradient-descent trainer.

pub mod analysis;
pub mod data;
pub mod error;
pub mod network;
pub mod numcore;
pub mod theory;
pub mod trainer;

pub use data::{ClassConvention, LabeledDataset, SubsetKind, SubsetView};
pub use error::{Error, IdxError, Result};
pub use network::{Activation, Head, NetworkConfig, NetworkState};
pub use numcore::{Matrix, SeededRng};
