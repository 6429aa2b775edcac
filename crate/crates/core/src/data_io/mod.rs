//! Embedding files, task manifests and the synthetic stream generator.
//!
//! The binary embedding format (`EMB1`, little-endian throughout):
//!
//! | bytes      | content                              |
//! |------------|--------------------------------------|
//! | 0..4       | magic `EMB1`                         |
//! | 4          | version, currently 1                 |
//! | 5..9       | dimension `d` as `u32`               |
//! | 9..17      | record count as `u64`                |
//! | per record | `u32` label, then `d` × `f32` values |

mod emb;
mod manifest;
mod synth;

pub use emb::{
    decode_embeddings, encode_embeddings, read_any, read_csv, read_embeddings, write_any,
    write_csv, write_embeddings, EmbeddingFile, HEADER_LEN, MAGIC, VERSION,
};
pub use manifest::{load_manifest, overlapping_classes, ManifestConfig, StreamManifest, TaskEntry};
pub use synth::{generate_synthetic, SynthSpec, SynthTask, SyntheticStream};
