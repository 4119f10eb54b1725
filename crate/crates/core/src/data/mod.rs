//! Label taxonomy, dataset manifests, splitting, image ingestion,
//! augmentation and the synthetic dataset generator.

mod augment;
mod image;
mod manifest;
mod synthetic;
mod taxonomy;

use std::path::Path;

pub use self::image::{load_image, RgbPixels};
pub use augment::{augment, AugmentOps};
pub use manifest::{split_dataset, DatasetManifest, ImageRef, Sample, Split, SplitRatio};
pub use synthetic::{generate_synthetic, render_sample, SyntheticConfig, MIN_IMAGE_SIZE, MIN_PER_ITEM};
pub use taxonomy::{validate_grouping, LabelTaxonomy, DEFAULT_TYPE_NAMES};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Decoded images of a manifest, ready for batching.
#[derive(Clone, Debug)]
pub struct ImageStore<T = f32> {
    pub taxonomy: LabelTaxonomy,
    pub input_shape: [usize; 3],
    images: Vec<Tensor<T>>,
    items: Vec<usize>,
    splits: Vec<Split>,
}

impl<T: Scalar> ImageStore<T> {
    /// Decode every sample; relative paths resolve against `base_dir`.
    pub fn from_manifest(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        manifest.validate()?;
        let images = manifest
            .samples
            .iter()
            .map(|s| load_image(&s.image, base_dir, manifest.input_shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageStore {
            taxonomy: manifest.taxonomy.clone(),
            input_shape: manifest.input_shape,
            images,
            items: manifest.samples.iter().map(|s| s.item).collect(),
            splits: manifest.samples.iter().map(|s| s.split).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sample indices of a split, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn image(&self, i: usize) -> &Tensor<T> {
        &self.images[i]
    }

    pub fn item(&self, i: usize) -> usize {
        self.items[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    /// NCHW batch of the given samples.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let refs: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.images[i]).collect();
        Tensor::stack(&refs)
    }
}
