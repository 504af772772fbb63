//! Specificity evaluation for long image captions.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`segment`]: POS tagging, cascaded phrase chunking and splitting of a
//!   caption into ordered detail units.
//! - [`triplet`]: cumulative partial captions and positive/negative
//!   minimal-pair triplets with token-level shuffling of negatives.
//! - [`embedding`]: the `SPECEMB1` binary table format, a JSONL debug
//!   format and cosine similarity.
//! - [`metrics`]: the specificity rate over scored triplets and the
//!   clipped-cosine caption score.
//! - [`trainer`]: a small dual encoder trained with a contrastive term plus
//!   positive/negative hinge terms with detached dynamic margins.
//! - [`correlation`]: Pearson, 1 - R², Kendall tau-b and Spearman agreement
//!   with human ratings, optionally bucketed by caption length.

pub mod correlation;
pub mod embedding;
pub mod error;
pub mod jsonl;
pub mod metrics;
pub mod rng;
pub mod segment;
pub mod trainer;
pub mod triplet;

pub use correlation::{CorrelationReport, JudgedSample};
pub use embedding::{cosine, EmbeddingTable};
pub use error::{Error, Result};
pub use metrics::{specificity_rate, specs_score, ScoredPair, ScoredTriplet, SpecificityReport};
pub use segment::{DetailUnit, SegmentedCaption};
pub use trainer::{LossBreakdown, LossWeights, ToyDualEncoder, TrainConfig};
pub use triplet::{ForgeConfig, PartialCaption, Polarity, Triplet};
