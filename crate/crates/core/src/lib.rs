//! Vec2Gloss: generate a dictionary gloss from the averaged contextual vector
//! of a target word, and measure how much each generated token relies on that
//! vector versus on the preceding gloss context.
//!
//! Module map:
//!
//! - [`corpus`]: senses, the sense file format, the character tokenizer and a
//!   synthetic gloss language with known ground truth.
//! - [`model`]: encoder-decoder transformer with the single-vector bottleneck.
//! - [`pipeline`]: span corruption, fine-tuning instances and both training
//!   stages.
//! - [`metrics`]: character BLEU, exact-match METEOR and per-POS tables.
//! - [`analysis`]: semantic and contextual dependency indices, chunk-level
//!   aggregation and rating-sheet generation.

pub mod analysis;
pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
pub use vec2gloss_numerics as numerics;
