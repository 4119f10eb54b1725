//! Procedural two-level image dataset.
//!
//! Each type fixes a background hue band and a base shape; each item inside a
//! type varies the number of shapes, their size and an accent hue. Items of
//! one type therefore share most of their pixels, while items of different
//! types differ almost everywhere.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbPixels;
use super::manifest::{split_dataset, DatasetManifest, SplitRatio};
use super::taxonomy::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

pub const MIN_IMAGE_SIZE: usize = 16;
pub const MIN_PER_ITEM: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub per_item: usize,
    /// Item index → sample count, for class-imbalance experiments.
    #[serde(default)]
    pub per_item_overrides: BTreeMap<usize, usize>,
    pub image_size: usize,
    pub seed: u64,
    pub ratio: SplitRatio,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_item: 30,
            per_item_overrides: BTreeMap::new(),
            image_size: 32,
            seed: 0,
            ratio: SplitRatio::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn count_for(&self, item: usize) -> usize {
        self.per_item_overrides.get(&item).copied().unwrap_or(self.per_item)
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    fn for_type(t: usize) -> Self {
        [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Cross][t % 4]
    }

    /// Whether offset (dx, dy) from the centre lies inside a shape of radius r.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Disk => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            Shape::Triangle => dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.55,
            Shape::Cross => (dx.abs() <= r * 0.33 && dy.abs() <= r) || (dy.abs() <= r * 0.33 && dx.abs() <= r),
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render sample `index` of `item`.
pub fn render_sample(taxonomy: &LabelTaxonomy, item: usize, index: usize, size: usize, seed: u64) -> RgbPixels {
    let t = taxonomy.type_of(item);
    let siblings = &taxonomy.items_by_type()[t];
    let local = siblings.iter().position(|&i| i == item).expect("item belongs to its type");
    let accents = siblings.len().div_ceil(4).max(1);

    let mut r = rng(derive_seed(seed, &[item as u64, index as u64]));
    let s = size as f64;

    let base_hue = t as f64 / taxonomy.type_count() as f64;
    let bg = hsv_to_rgb(base_hue + r.random_range(-0.02..=0.02), 0.45, 0.8 + r.random_range(-0.05..=0.05));

    let count = 1 + local % 2;
    let large = (local / 2) % 2 == 1;
    let accent = local / 4;
    let accent_hue = base_hue + 0.3 + 0.4 * accent as f64 / (accents.max(2) - 1) as f64;
    let fg = hsv_to_rgb(accent_hue + r.random_range(-0.02..=0.02), 0.9, 0.95);

    let mut radius = if large { 0.3 * s } else { 0.18 * s };
    if count == 2 {
        radius *= 0.62;
    }
    let jitter = 0.06 * s;
    let (cx, cy) = (s / 2.0 + r.random_range(-jitter..=jitter), s / 2.0 + r.random_range(-jitter..=jitter));
    let centres: Vec<(f64, f64)> =
        if count == 1 { vec![(cx, cy)] } else { vec![(cx - 0.22 * s, cy), (cx + 0.22 * s, cy)] };
    let shape = Shape::for_type(t);

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = centres.iter().any(|&(ox, oy)| shape.contains(px - ox, py - oy, radius));
            let base = if inside { fg } else { bg };
            for c in base {
                let v = (c + r.random_range(-0.05..=0.05)).clamp(0.0, 1.0);
                data.push((v * 255.0).round() as u8);
            }
        }
    }
    RgbPixels { width: size, height: size, data }
}

/// Synthetic dataset with inline images, split by [`split_dataset`].
/// Samples are ordered by item, then by index within the item.
pub fn generate_synthetic(taxonomy: &LabelTaxonomy, config: &SyntheticConfig) -> Result<DatasetManifest> {
    taxonomy.validate()?;
    if config.image_size < MIN_IMAGE_SIZE {
        return Err(Error::Parameter(format!(
            "image size {} is below the minimum of {MIN_IMAGE_SIZE}",
            config.image_size
        )));
    }
    if let Some(&bad) = config.per_item_overrides.keys().find(|&&i| i >= taxonomy.item_count()) {
        return Err(Error::Parameter(format!("count override for unknown item {bad}")));
    }
    for item in 0..taxonomy.item_count() {
        let n = config.count_for(item);
        if n < MIN_PER_ITEM {
            return Err(Error::Parameter(format!(
                "item {item} would get {n} samples, at least {MIN_PER_ITEM} are required"
            )));
        }
    }
    let mut samples = Vec::new();
    for item in 0..taxonomy.item_count() {
        for index in 0..config.count_for(item) {
            let px = render_sample(taxonomy, item, index, config.image_size, config.seed);
            samples.push((px.to_inline(), item));
        }
    }
    let size = config.image_size;
    split_dataset(samples, taxonomy, [3, size, size], config.ratio, config.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn default_shape_and_counts() {
        let tax = LabelTaxonomy::desk_default();
        let m = generate_synthetic(&tax, &SyntheticConfig::default()).unwrap();
        assert_eq!(m.samples.len(), 960);
        assert_eq!(m.input_shape, [3, 32, 32]);
        for c in m.class_counts() {
            assert_eq!(c, (24, 3, 3));
        }
        assert_eq!(m.count(Split::Train), 768);
    }

    #[test]
    fn same_seed_same_bytes() {
        let tax = LabelTaxonomy::uniform(&["a", "b"], 2).unwrap();
        let cfg = SyntheticConfig { per_item: 10, seed: 4, ..Default::default() };
        let a = generate_synthetic(&tax, &cfg).unwrap().to_json().unwrap();
        let b = generate_synthetic(&tax, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let other = SyntheticConfig { seed: 5, ..cfg };
        assert_ne!(a, generate_synthetic(&tax, &other).unwrap().to_json().unwrap());
    }

    #[test]
    fn rejects_small_images_and_counts() {
        let tax = LabelTaxonomy::desk_default();
        let small = SyntheticConfig { image_size: 15, ..Default::default() };
        assert!(matches!(generate_synthetic(&tax, &small), Err(Error::Parameter(_))));
        let few = SyntheticConfig { per_item: 5, ..Default::default() };
        assert!(matches!(generate_synthetic(&tax, &few), Err(Error::Parameter(_))));
    }

    #[test]
    fn overrides_create_imbalance() {
        let tax = LabelTaxonomy::uniform(&["a", "b"], 2).unwrap();
        let mut cfg = SyntheticConfig { per_item: 10, ..Default::default() };
        cfg.per_item_overrides.insert(3, 40);
        let m = generate_synthetic(&tax, &cfg).unwrap();
        assert_eq!(m.samples.len(), 70);
        assert_eq!(m.class_counts()[3], (32, 4, 4));
        cfg.per_item_overrides.insert(9, 40);
        assert!(generate_synthetic(&tax, &cfg).is_err());
    }
}
