//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HFC1"
//! 4       1     format version (1)
//! 5       4     header length L, u32 little-endian
//! 9       L     header, UTF-8 JSON: {format_version, backbone, head, metadata, tensors}
//! 9+L     ...   one f32 little-endian blob per entry of `tensors`, in order
//! ```
//!
//! `tensors` lists every named parameter and batch-norm running statistic in
//! declaration order with its shape; loading rejects any header whose list
//! differs from the one implied by the backbone and head specs, and any
//! stream with bytes left over after the last blob.

use serde::{Deserialize, Serialize};

use super::{BackboneSpec, HeadSpec, Model};
use crate::data::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"HFC1";
pub const FORMAT_VERSION: u8 = 1;

/// Which hierarchy level a model's head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Coarse labels (types, or merged item groups).
    Type,
    /// Fine labels (items).
    Item,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Type => 1,
            Stage::Item => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub stage: Stage,
    pub iteration: u32,
    pub taxonomy: LabelTaxonomy,
    /// Item → label-group map the head was trained against, when it differs
    /// from the taxonomy's own item → type map.
    pub label_groups: Option<Vec<usize>>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u8,
    backbone: BackboneSpec,
    head: HeadSpec,
    metadata: CheckpointMetadata,
    tensors: Vec<TensorEntry>,
}

fn entries<T: Scalar>(model: &Model<T>) -> Vec<TensorEntry> {
    model.named_tensors().into_iter().map(|(name, _, t)| TensorEntry { name, shape: t.shape().to_vec() }).collect()
}

/// Serialize a model and its metadata. Parameters are stored as f32.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, metadata: &CheckpointMetadata) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        backbone: model.backbone_spec().clone(),
        head: *model.head_spec(),
        metadata: metadata.clone(),
        tensors: entries(model),
    };
    let header = serde_json::to_vec(&header)?;
    let header_len =
        u32::try_from(header.len()).map_err(|_| Error::MalformedCheckpoint("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(9 + header.len() + 4 * model.param_count() * 2);
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, t) in model.named_tensors() {
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn load_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointMetadata)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::CorruptMagic { found: magic });
    }
    let version = r.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::MalformedCheckpoint(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: header.format_version, expected: FORMAT_VERSION });
    }
    header.metadata.taxonomy.validate().map_err(|e| Error::MalformedCheckpoint(format!("taxonomy: {e}")))?;
    let mut model: Model<T> = Model::build(&header.backbone, &header.head, 0)
        .map_err(|e| Error::MalformedCheckpoint(format!("specs: {e}")))?;
    let expected = entries(&model);
    if expected != header.tensors {
        return Err(Error::MalformedCheckpoint("tensor list does not match the declared specs".into()));
    }
    for (_, _, t) in model.named_tensors_mut() {
        let raw = r.take(4 * t.len(), "parameter blob")?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            *dst = T::from_f64_lossy(f64::from(v));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes after the last blob", bytes.len() - r.pos)));
    }
    Ok((model, header.metadata))
}

impl<T: Scalar> Model<T> {
    /// Tensor with the given checkpoint name.
    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.named_tensors().into_iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneSpec, HeadSpec};

    fn meta() -> CheckpointMetadata {
        CheckpointMetadata {
            stage: Stage::Type,
            iteration: 1,
            taxonomy: LabelTaxonomy::desk_default(),
            label_groups: None,
            seed: 3,
            config_digest: "abc".into(),
        }
    }

    fn model() -> Model<f32> {
        Model::build(&BackboneSpec::default(), &HeadSpec::new(4, 64), 11).unwrap()
    }

    #[test]
    fn round_trip_is_a_fixpoint() {
        let bytes = save_checkpoint(&model(), &meta()).unwrap();
        let (loaded, m) = load_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(m, meta());
        assert_eq!(loaded, model());
        assert_eq!(save_checkpoint(&loaded, &m).unwrap(), bytes);
        assert_eq!(&bytes[..4], b"HFC1");
        assert_eq!(bytes[4], 1);
    }

    #[test]
    fn flipped_magic() {
        let mut bytes = save_checkpoint(&model(), &meta()).unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(load_checkpoint::<f32>(&bytes), Err(Error::CorruptMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = save_checkpoint(&model(), &meta()).unwrap();
        bytes[4] = 9;
        assert!(matches!(load_checkpoint::<f32>(&bytes), Err(Error::VersionMismatch { found: 9, expected: 1 })));
    }

    #[test]
    fn truncated_blob() {
        let bytes = save_checkpoint(&model(), &meta()).unwrap();
        for cut in [2, 7, 40, bytes.len() - 1] {
            assert!(matches!(load_checkpoint::<f32>(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }

    #[test]
    fn trailing_bytes() {
        let mut bytes = save_checkpoint(&model(), &meta()).unwrap();
        bytes.push(0);
        assert!(matches!(load_checkpoint::<f32>(&bytes), Err(Error::MalformedCheckpoint(_))));
    }
}
