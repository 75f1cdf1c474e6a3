//! Loading, subsetting, splitting and per-image processing.

mod cifar;
mod dataset;
mod idx;
mod image;
mod llds;
mod pipeline;
mod source;
mod split;
mod stats;
mod subset;

pub use cifar::{cifar_batch_paths, encode_cifar, load_cifar_bin, parse_cifar, CIFAR_RECORD};
pub use dataset::{
    digit_classes, names, resolve_class, Dataset, SplitTag, CIFAR10_CLASSES, FMNIST_CLASSES,
};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, load_idx_dir, parse_idx_images,
    parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use image::{
    apply_filter, apply_filter_real, gray_to_rgb, preprocess, to_rgb, upsample2x, FilterKind,
    BGR_MEANS,
};
pub use llds::{
    decode_llds, encode_llds, read_llds, sidecar_path, write_llds, LldsSidecar, LLDS_MAGIC,
    LLDS_VERSION,
};
pub use pipeline::{run_pipeline, ImagePipeline, PipelineStep, TensorDataset};
pub use source::{load_source, SourceKind};
pub use split::{protocol_splits, stratified_counts, stratified_split, SplitConfig, Splits};
pub use stats::{dataset_entropy, dataset_stats, DatasetStats, Entropy, Estimator, VARIANCE_FLOOR};
pub use subset::{build_subset, Difficulty, SampleSize, SubsetSpec};
