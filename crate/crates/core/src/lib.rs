// SPDX-License-Identifier: Apache-2.0

//! Joint design of k-space coverage, averaging patterns and reconstruction
//! parameters for low-SNR Cartesian MRI.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: square complex images, centered/FFT index mapping, unitary 2-D DFTs.
//! * [`kspace`]: acquisition budget algebra, averaging patterns, multi-coil
//!   k-space arrays and the noise model.
//! * [`phantom`]: synthetic ground truth, coil sensitivities, reference images
//!   and the on-disk dataset format.
//! * [`recon`]: zero-filled, apodized and SENSE-TV (ADMM) reconstruction, plus
//!   training losses and their gradients.
//! * [`design`]: budget projection, integer rounding, projected SGD training
//!   and the grid search over gridsizes.
//! * [`metrics`]: MSE, NRMSE and SSIM.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod grid;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{ComplexImage, C64};
pub use kspace::{AcquisitionBudget, AveragingPattern, IntegerAveragingPattern, MultiCoilKSpace};
