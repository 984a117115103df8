//! On-disk data: dataset manifests and `EMB1` embedding files.

mod emb1;
mod manifest;

pub use emb1::{read_embeddings, write_embeddings, EmbeddingError, EmbeddingMatrix, MAGIC};
pub use manifest::{
    load_manifest, parse_manifest, BoundingBox, BoxKind, DatasetManifest, ImageRecord, LoadOptions,
    LoadedManifest, ManifestError, Split,
};
