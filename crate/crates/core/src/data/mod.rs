//! Embedding files, datasets, splits, checkpoints and logit caches.

mod checkpoint;
mod dataset;
mod embeddings;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use checkpoint::{
    cache_logits, load_logits, logits_for_dataset, logits_from_checkpoint, logits_to_checkpoint, Checkpoint,
    LogitRecord,
};
pub use dataset::{load_dataset, read_dataset, split_train_dev, tokenize, Dataset, Instance, LabelMap, Partition};
pub use embeddings::{load_embeddings, read_word2vec, EmbeddingTable, Vocab};

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
