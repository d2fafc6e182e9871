//! Plug-and-play proximal block coordinate descent (PnP-PBCD) for
//! hyperspectral anomaly detection.
//!
//! An observed cube `O` (rows × cols × bands) is split as
//! `O = Z ×₃ E + S + N`: a low-rank background with an orthonormal spectral
//! basis `E` and eigenimages `Z`, a group-sparse anomaly tensor `S`, and
//! noise. The solver alternates three proximal block updates whose objective
//! is non-increasing by construction, and exposes the stationarity residuals
//! that certify convergence.
//!
//! Module map:
//!
//! * [`tensor`]: dense third-order tensors, mode-k unfolding, mode-3 products.
//! * [`prox`]: sparsity penalties and their exact scalar/group proximal maps.
//! * [`stiefel`]: projection onto orthonormal frames and Riemannian gradients.
//! * [`denoiser`]: gradient-step proximal denoiser and its implicit prior.
//! * [`solver`]: the block coordinate descent iteration and its diagnostics.
//! * [`detector`]: score maps, the global RX baseline, ROC/AUC.
//! * [`io`], [`synth`], [`cli`]: file formats, synthetic scenes, command line.

pub mod cli;
pub mod denoiser;
pub mod detector;
mod error;
pub mod io;
pub mod prox;
pub mod solver;
pub mod stiefel;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor3};
