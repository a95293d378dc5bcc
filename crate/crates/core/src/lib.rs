//! Feature-compensation algorithms for noise-robust speech front-ends.
//!
//! The crate covers the full chain from PCM samples to compensated cepstral
//! features:
//!
//! - [`frontend`]: framing, Mel filterbank, LMFB/MFCC extraction with
//!   liftering, deltas and cepstral mean subtraction
//! - [`nmf`]: KL-divergence NMF dictionary learning and subspace projection
//! - [`heq`]: quantile-based histogram equalization
//! - [`gmm`]: Gaussian mixture modelling with EM and sufficient statistics
//! - [`mllr`]: global maximum-likelihood linear regression mean adaptation
//! - [`compensation`]: the SPLICE family of piecewise-linear compensations
//!   (stereo SPLICE, M-SPLICE, diagonal M-SPLICE, the non-stereo extension
//!   and run-time adaptation)
//!
//! Everything here is `no_std` + `alloc`; file formats, WAV ingestion and the
//! command-line surface live in the companion `rft` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod compensation;
pub mod error;
pub mod frontend;
pub mod gmm;
pub mod heq;
pub mod mat;
pub mod mllr;
pub mod nmf;

pub use error::{Error, Result};
pub use mat::Mat;
