//! Segmentation toolkit for indistinct-boundary structures in 3D retinal OCT.
//!
//! Pipeline stages:
//!
//! 1. [`volume_io`]: load, save and resample labeled volumes.
//! 2. [`sdi`]: stochastic defect injection (synthetic macular holes).
//! 3. [`net`]: the dual-encoder frequency-domain network, on top of the
//!    small reverse-mode autodiff engine in [`nn`].
//! 4. [`loss`]: focal / boundary / dice / CE / deep-ranking terms and the
//!    training-phase weight schedule that blends them.
//! 5. [`metrics`]: MIoU, Dice, ASSD, HD, HD95 and adjusted Rand index.
//! 6. [`recon`]: smoothing, iso-surface meshes and ETDRS sector volumes.
//! 7. [`harness`]: configuration, training, checkpoints, evaluation.

pub mod error;
pub mod grid;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod recon;
pub mod sdi;
pub mod volume_io;

pub use error::{Error, Result};
pub use grid::Grid3;
