//! DSF-GAN: a conditional tabular GAN whose generator loss is augmented
//! mid-training with the loss of a downstream classifier or regressor fit on
//! synthetic samples, plus the evaluation harness needed to measure
//! machine-learning efficacy of the synthetic data against a base GAN
//! without feedback.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode AD over dense `f64` tensors + Adam.
//! - [`tabular`]: CSV ingestion, per-column encoders (mode-specific
//!   normalization / one-hot), deterministic splits.
//! - [`gancore`]: conditional generator/critic, conditional loss `H`,
//!   Wasserstein-style training loop with weight clipping.
//! - [`feedback`]: downstream model fit on synthetic samples mid-training,
//!   injecting `lambda * L_f` into the generator loss after warmup.
//! - [`evalharness`]: efficacy metrics, cross-validated paired experiments,
//!   confidence intervals, report output.

pub mod autodiff;
pub mod evalharness;
pub mod feedback;
pub mod gancore;
pub mod rng;
pub mod tabular;
