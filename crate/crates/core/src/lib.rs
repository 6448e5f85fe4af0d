//! Guided nonlocal patch regularization for multiband image fusion.
//!
//! The fused image is modelled as `Z = X E` with a low-dimensional variable
//! `X` and a spectral basis `E`. Given a blurred, decimated observation
//! `Y_l = S B Z + N_l` and a spectrally degraded one `Y_h = Z R + N_h`, the
//! [`solver`] minimizes
//!
//! ```text
//! 1/2 |Y_l - S B X E|^2 + lambda1/2 |Y_h - X E R|^2 + lambda2 phi(X)
//! ```
//!
//! where `phi` is a weighted l1 norm of patch differences over a search
//! window, with weights computed once from `Y_h`. Every ADMM subproblem has a
//! closed form: the X-update is a Fourier-domain division, the rest are small
//! matrix products and soft thresholds.

pub mod cli;
pub mod error;
pub mod frequency;
pub mod grid;
pub mod linops;
pub mod metrics;
pub mod nlpr;
pub mod simkit;
pub mod solver;

pub use error::{FusionError, Result};
pub use grid::{Grid, MultibandImage, Offset, PatchSpec};
