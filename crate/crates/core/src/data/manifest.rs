use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::taxonomy::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a sample's pixels live.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    /// PNG file, relative to the manifest's directory unless absolute.
    Path { path: String },
    /// 8-bit interleaved RGB, base64 encoded.
    Inline { width: usize, height: usize, rgb: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: ImageRef,
    pub item: usize,
    pub split: Split,
}

/// Train : validation : test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio { train: 8, validation: 1, test: 1 }
    }
}

impl SplitRatio {
    fn total(&self) -> u32 {
        self.train + self.validation + self.test
    }

    /// Per-class counts: floors for validation and test, the rest to train.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        let total = self.total() as usize;
        let val = n * self.validation as usize / total;
        let test = n * self.test as usize / total;
        (n - val - test, val, test)
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad split ratio {s:?}: {e}")))?;
        match parts[..] {
            [train, validation, test] if train > 0 => Ok(SplitRatio { train, validation, test }),
            _ => Err(Error::Config(format!("split ratio must be train:val:test, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub taxonomy: LabelTaxonomy,
    /// (channels, height, width) after preprocessing.
    pub input_shape: [usize; 3],
    pub seed: u64,
    pub ratio: SplitRatio,
    pub samples: Vec<Sample>,
}

/// Deterministic stratified split. Samples are shuffled once with `seed`;
/// within each item class, in shuffled order, the first share goes to train,
/// then validation, then test, using [`SplitRatio::allocate`]. The manifest
/// keeps the input order of the samples.
pub fn split_dataset(
    samples: Vec<(ImageRef, usize)>,
    taxonomy: &LabelTaxonomy,
    input_shape: [usize; 3],
    ratio: SplitRatio,
    seed: u64,
) -> Result<DatasetManifest> {
    taxonomy.validate()?;
    if samples.len() < 10 {
        return Err(Error::Validation(format!("need at least 10 samples, got {}", samples.len())));
    }
    let n = taxonomy.item_count();
    if let Some((i, (_, item))) = samples.iter().enumerate().find(|(_, (_, item))| *item >= n) {
        return Err(Error::Validation(format!("sample {i} has item label {item}, taxonomy has {n}")));
    }
    let mut seen = HashSet::new();
    for (r, _) in &samples {
        if !seen.insert(r) {
            return Err(Error::Validation(format!("image {r:?} appears twice")));
        }
    }
    let mut per_class = vec![Vec::new(); n];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng(seed));
    for &i in &order {
        per_class[samples[i].1].push(i);
    }
    let empty: Vec<&str> = per_class
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_empty())
        .map(|(c, _)| taxonomy.item_names[c].as_str())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Validation(format!("classes without samples: {empty:?}")));
    }
    let mut splits = vec![Split::Train; samples.len()];
    for members in &per_class {
        let (train, val, _) = ratio.allocate(members.len());
        for (rank, &i) in members.iter().enumerate() {
            splits[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    let samples = samples.into_iter().zip(splits).map(|((image, item), split)| Sample { image, item, split }).collect();
    Ok(DatasetManifest { taxonomy: taxonomy.clone(), input_shape, seed, ratio, samples })
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// (train, validation, test) counts per item class.
    pub fn class_counts(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(0, 0, 0); self.taxonomy.item_count()];
        for s in &self.samples {
            let c = &mut out[s.item];
            match s.split {
                Split::Train => c.0 += 1,
                Split::Validation => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.taxonomy.validate()?;
        let n = self.taxonomy.item_count();
        let mut seen = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.item >= n {
                return Err(Error::Validation(format!("sample {i} has item label {}", s.item)));
            }
            if !seen.insert(&s.image) {
                return Err(Error::Validation(format!("image {:?} appears twice", s.image)));
            }
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Validation(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
