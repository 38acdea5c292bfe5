//! Frame-analysis workbench core: corpus handling, the frame codebook, the
//! human annotation protocol, zero-shot classification through a pluggable
//! completion backend, evaluation and descriptive analytics.

pub mod analytics;
pub mod annotation;
pub mod codebook;
pub mod corpus;
pub mod evaluation;
pub mod frame;
pub mod inference;
pub mod split;

pub use codebook::{Codebook, FrameEntry};
pub use corpus::{Article, Corpus, CorpusManifest, Sentiment};
pub use frame::FrameLabel;
