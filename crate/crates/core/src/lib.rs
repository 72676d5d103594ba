//! Boundary knowledge translation for few-shot foreground segmentation.
//!
//! A segmentation network is trained on a novel target category from a
//! handful of labels, while two boundary critics, trained on a disjoint,
//! fully labeled source pool, push its predictions towards masks that
//! neither leak background into the foreground nor the reverse.

pub mod checkpoint;
pub mod datamodel;
pub mod datasets;
mod error;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod networks;
pub mod trainer;
pub mod transforms;
pub mod triplets;

pub use error::{Error, Result};
