//! Synthetic labeled image corpus, image/feature grids and their file formats.

pub mod grid;
pub mod io;
pub mod toy;

pub use grid::{FeatureGrid, ImageGrid};
pub use io::{load_feature_file, load_image_file, write_feature_file, write_image_file};
pub use toy::{generate_toy_dataset, subsample_fraction, GeneratorSpec, ShapeKind, ToyDataset};
