//! Unrolled reconstruction networks for compressed-sensing imaging.
//!
//! This crate implements classical proximal reconstruction algorithms
//! (PDHG, ADMM, ISTA) for masked-Fourier MRI and fan-beam CT forward
//! models, and generalizes each algorithm into three progressively
//! relaxed unrolled-network variants that are trainable on synthetic
//! phantoms through an in-crate reverse-mode autodiff engine.
//!
//! The main pieces:
//!
//! * [`tensor`] / [`autodiff`] — dense f64 tensors and the tape-based
//!   reverse-mode engine used by the networks.
//! * [`operators`] — masked-Fourier and fan-beam encoding operators with
//!   matched adjoints, plus Poisson-disk k-space sampling masks.
//! * [`transforms`] — orthonormal Haar wavelet and finite-difference
//!   sparsifying transforms.
//! * [`solvers`] — non-learned PDHG/ADMM/ISTA baselines and fan-beam
//!   filtered backprojection.
//! * [`nets`] — builders for the nine unrolled networks and the
//!   parameter-matched `pdhg I*` control.
//! * [`training`] — MSE and symmetry losses, ADAM, and the training loop.
//! * [`simulation`] — synthetic phantoms, sample generation, datasets.
//! * [`metrics`] — MSE/PSNR/SSIM and the radial error spectrum.
//! * [`container`] — the portable binary array container used for
//!   datasets and checkpoints.

pub mod app;
pub mod autodiff;
pub mod container;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod operators;
pub mod simulation;
pub mod solvers;
pub mod tensor;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
