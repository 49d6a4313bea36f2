//! Diffusion-based time-series augmentation with frequency-band guidance,
//! adaptive positive-pair weighting and weighted contrastive pretraining,
//! evaluated with a linear probe on a synthetic activity corpus.
//!
//! Module map:
//!
//! * [`autodiff`]: dense tensors, a reverse-mode tape, Adam and checkpoints.
//! * [`signal`]: Haar bands, DTW, warp aggregation, windows and crops.
//! * [`diffusion`]: noise schedule, noise predictor, reverse sampling and
//!   reference-guided generation.
//! * [`weighting`]: static templates, response maps and pair weights.
//! * [`contrastive`]: encoder, weighted NT-Xent and the pretraining loop.
//! * [`classifier`]: linear probe and metrics.
//! * [`data`]: synthetic corpus, CSV persistence and reference pairing.
//! * [`pipeline`]: run configuration and the command implementations.

pub mod autodiff;
pub mod classifier;
pub mod contrastive;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod weighting;

pub use error::{ClarError, Result};
