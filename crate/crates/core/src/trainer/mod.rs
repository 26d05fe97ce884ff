//! MNIST ingestion and straight-through-estimator training.

mod idx;
mod ste;

pub use idx::{
    binarize_input, encode_idx_images, encode_idx_labels, load_idx, load_mnist, parse_idx_images, parse_idx_labels,
    Dataset, Split, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use ste::{finalize, train_ste, EpochStats, ShadowHead, ShadowLayer, ShadowModel, TrainConfig, TrainOutcome};
