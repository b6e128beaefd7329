//! On-disk formats and in-memory views of feature dumps, alignments,
//! attribute tables and gold sentence-similarity labels.

mod alignments;
mod attributes;
mod format;
mod gold;
mod manifest;
mod sampling;
mod text;

pub use alignments::{load_alignments, spans_by_utterance, write_alignments, WordSpan};
pub use attributes::{
    build_prob_attribute_table, one_hot_table, read_attribute_table, write_attribute_table,
    AttributeKind, AttributeTable, ProbTableBuild,
};
pub use format::{
    decode_feature_bytes, decode_feature_header, encode_feature_bytes, read_feature_file,
    read_feature_header, write_feature_file, FeatureHeader, FeatureSequence, FrameShift,
    S3MF_HEADER_LEN, S3MF_MAGIC, S3MF_VERSION,
};
pub use gold::{read_gold_sts, write_gold_sts, SentencePair};
pub use manifest::{read_manifest, write_manifest, FeatureStore, ManifestRecord};
pub use sampling::{sample_word_instances, FeatureRef, SamplingConfig, SegmentSample};
pub use text::normalize_word;
