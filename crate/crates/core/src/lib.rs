//! Semantic-guided hierarchical codebooks.
//!
//! A frozen semantic codebook of `K` codes selects, for every patch, one of `K` pixel
//! sub-codebooks of `m` codes each. The pair `(i, j)` flattens to the single token
//! `h = i·m + j` in a vocabulary of `K·m` image tokens, so with `m = 12` the pair
//! `(3, 5)` is token 41.

pub mod analysis;
pub mod codebook;
pub mod corpus;
pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod quantizer;
pub mod rng;
pub mod trainer;
pub mod vocab;

pub use analysis::{VrrOptions, VrrReport};
pub use codebook::{CodeTable, HierarchicalCodebook, PixelSubCodebook, SemanticCodebook};
pub use error::{Error, ParseError, Result};
pub use features::{GrayImage, PatchSpec};
pub use grid::{concat_features, flatten_index, unflatten_index, FeatureGrid, IndexGrid, TokenGrid};
pub use quantizer::{dequantize, quantize_hierarchical, quantize_pixel, quantize_semantic, QuantizationResult};
pub use trainer::{TrainConfig, UsageStats};
pub use vocab::{Atom, FrameMode, VocabFrame};
