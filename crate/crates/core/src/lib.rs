//! Classification of interview sentences against a three-tier value
//! taxonomy, framed as binary relatedness: one shared model scores a
//! (sentence, label) pair, trained on gold pairs plus tiered negatives.
//!
//! Pipeline: [`taxonomy`] and [`corpus`] load data, [`sampler`] builds
//! training instances (deformed by [`augment`]), [`model`] assembles the
//! attention-LSTM on top of the [`nn`] kernel, [`train`] fits it and tunes
//! per-label thresholds, and [`eval`] scores it under both evaluation
//! protocols.

pub mod augment;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod par;
pub mod sampler;
pub mod synth;
pub mod taxonomy;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use taxonomy::{LabelId, RelationTier, Taxonomy};
