//! Dataset ingestion, preprocessing, episode sampling and synthetic data.

use std::collections::BTreeMap;

pub mod episode;
pub mod image;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use episode::{sample_episode, Episode, EpisodeSpec, Labeled, DEFAULT_QUERY};
pub use image::Image;
pub use manifest::{load_split_manifest, Split, SplitManifest};
pub use preprocess::{preprocess_eval, preprocess_train, PreprocessConfig};
pub use synthetic::{make_synthetic_dataset, ClassGeometry, DomainStyle, SyntheticSpec};

/// Examples grouped by class identifier, in sorted class order.
pub type ClassSection<T> = BTreeMap<String, Vec<T>>;
