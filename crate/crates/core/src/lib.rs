//! Localized parameter-noise regularization for transformer fine-tuning.
//!
//! The crate is organised bottom-up:
//!
//! - [`store`]: tagged parameter storage and the `PKPT` checkpoint format
//! - [`selector`]: boolean predicates choosing which tensors get noise
//! - [`noise`]: std-scaled uniform (or Gaussian) perturbation under a seed
//! - [`metrics`]: adjusted relation F1 and ROUGE-1/2/L/Lsum
//! - [`autodiff`] and [`models`]: a small reverse-mode engine and two toy transformers
//! - [`harness`]: synthetic tasks and the multi-seed sweep runner

pub mod autodiff;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod noise;
pub mod selector;
pub mod store;
