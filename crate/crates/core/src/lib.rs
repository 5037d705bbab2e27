//! Lung CT scan classification pipeline.
//!
//! The crate covers every stage of the pipeline:
//!
//! * [`imaging`]: grayscale loading, bilinear resizing, CLAHE enhancement and
//!   3×3 median denoising.
//! * [`augment`]: seeded augmentation, dataset expansion and stratified
//!   splitting.
//! * [`dataset`]: class-per-directory ingestion into a CSV manifest.
//! * [`nn`]: a small tensor engine with exact forward/backward passes for the
//!   convolution, pooling, dense and softmax layers of the classifier.
//! * [`train`]: cross-entropy training with Adam/SGD, checkpoints and curves.
//! * [`metrics`]: confusion matrices and per-class / aggregate metrics.
//! * [`cli`]: the `ct-classify` command line.

pub mod augment;
pub mod cli;
pub mod dataset;
mod error;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
