//! Walsh-Hadamard spectral analysis of pseudo-boolean functions and
//! Fourier-sparsity regularization for networks on zero-one inputs.
//!
//! The crate is organised bottom-up:
//!
//! * [`fourier`]: bit vectors, dense/sparse function representations and the
//!   fast Walsh-Hadamard transform.
//! * [`gf2`]: hashing matrices over GF(2), sub-sampling, bucketed spectra and
//!   collision statistics.
//! * [`mlp`]: a small fully-connected regression network with exact
//!   reverse-mode gradients, Adam and an early-stopping training loop.
//! * [`regularizers`]: full and hashed L1 spectrum penalties.
//! * [`metrics`]: spectral approximation error, energies, R² and snapshots.
//! * [`tree`]: exact Fourier spectra of decision trees and forests, a
//!   minimal forest trainer and the coefficient-deletion ablation.
//! * [`synth`]: synthetic targets, cube sampling, splits and CSV ingestion.
//! * [`experiments`]: config files, manifests and the experiment runners.

pub mod error;
pub mod experiments;
pub mod fourier;
pub mod gf2;
pub mod metrics;
pub mod mlp;
pub mod regularizers;
pub mod rng;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use fourier::{BitVector, CubeFunction, DenseFunction, Frequency, SparseFourierFunction, Spectrum};
pub use gf2::HashingMatrix;
pub use mlp::{MlpModel, TrainConfig};

