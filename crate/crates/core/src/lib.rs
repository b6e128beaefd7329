//! Layer-wise analysis of frame-level speech model representations.
//!
//! The crate works on feature dumps (one matrix per utterance and layer) and
//! word alignments, and implements four families of analyses:
//!
//! * [`cca`]: canonical correlation and projection-weighted CCA between pooled
//!   word-segment representations and linguistic attribute vectors;
//! * [`awd`]: acoustic word discrimination by pooled cosine or DTW distances,
//!   scored with average precision;
//! * [`wordseg`]: training-free word segmentation from adjacent-frame
//!   dissimilarity peaks, with boundary precision/recall/F1/R-value;
//! * [`sts`]: spoken sentence similarity scored by Spearman correlation.
//!
//! [`featurestore`] defines the on-disk formats and [`pooling`] turns spans of
//! frames into fixed-size vectors.

pub mod awd;
pub mod cca;
pub mod error;
pub mod featurestore;
pub mod numeric;
pub mod pooling;
pub mod report;
pub mod sts;
pub mod wordseg;

pub use error::{ProbeError, Result};
pub use featurestore::{
    AttributeKind, AttributeTable, FeatureRef, FeatureSequence, FeatureStore, ManifestRecord,
    SegmentSample, WordSpan,
};
pub use pooling::PoolingSpec;
