//! Reasoning-based implicit semantic data augmentation (RISDA) for
//! long-tailed classification.
//!
//! The crate trains a small feedforward network in two stages. Stage I
//! fits features and a classifier with plain cross-entropy; stage II
//! fine-tunes with a closed-form upper bound of the cross-entropy under
//! infinitely many Gaussian feature augmentations, where tail classes borrow
//! prototypes and covariances from the classes they are confused with.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod loss;
pub mod net;
pub mod numeric;
pub mod pipeline;
pub mod reasoning;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
