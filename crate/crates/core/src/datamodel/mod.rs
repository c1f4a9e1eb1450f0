//! Boxes, trajectories, region features, relation queries, word vectors and
//! the on-disk formats that carry them.

mod bbox;
mod embedding;
mod features;
mod manifest;
mod relation;
mod trajectory;
mod vocab;

pub use bbox::{geometry_feature, spatial_iou, BBox};
pub use embedding::{
    embed_tokens, EmbedMode, EmbeddingTable, DEFAULT_EMBEDDING_DIM, DEFAULT_EMBEDDING_SEED,
};
pub use features::{
    decode_video_features, encode_video_features, load_video_features, save_video_features,
    LoadStats, RegionProposal, VideoFeatures, FEATURES_MAGIC, FEATURES_VERSION,
};
pub use manifest::{
    format_ground_truth, load_ground_truth, load_samples, parse_ground_truth, save_ground_truth,
    GtInstance, Manifest, ManifestEntry, VideoRelationSample,
};
pub use relation::{tokenize_relation, RelationPart, RelationQuery};
pub use trajectory::Trajectory;
pub use vocab::{Vocabulary, END_TOKEN, PAD_TOKEN, START_TOKEN};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid box {0}")]
    InvalidBox(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("malformed relation '{raw}': {reason}")]
    Relation { raw: String, reason: String },
    #[error("token '{0}' is not in the vocabulary")]
    UnknownToken(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
