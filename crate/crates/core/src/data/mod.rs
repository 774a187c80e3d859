//! Dataset containers, synthetic data, preprocessing and balanced splits.

pub mod container;
mod dataset;
mod preprocess;
mod split;
mod synth;

pub use dataset::{load_dataset, Dataset, DatasetManifest, EvalSet, LabeledSet, UnlabeledSet, MANIFEST_FILE};
pub use preprocess::{import_csv, preprocess};
pub use split::{class_counts, class_quota, split_balanced, Splits, AUDIT_FILE, TEST_FILE, TRAIN_FILE, UNLABELED_FILE};
pub use synth::{generate_synthetic, SynthSpec};
