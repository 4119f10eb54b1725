use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::{Scalar, Tensor};

/// Train-time augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentOps {
    /// Probability of a horizontal flip.
    pub flip_probability: f64,
    /// Half-width of the uniform brightness offset.
    pub brightness: f64,
    /// Zero-pad by this many pixels and crop back at a random offset.
    pub crop_pad: usize,
}

impl AugmentOps {
    pub const NONE: AugmentOps = AugmentOps { flip_probability: 0.0, brightness: 0.0, crop_pad: 0 };

    pub fn is_identity(&self) -> bool {
        self.flip_probability == 0.0 && self.brightness == 0.0 && self.crop_pad == 0
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Parameter(format!("flip probability {} outside [0,1]", self.flip_probability)));
        }
        if !(0.0..=0.5).contains(&self.brightness) {
            return Err(Error::Parameter(format!("brightness jitter {} outside [0,0.5]", self.brightness)));
        }
        if self.crop_pad > 0 && 2 * self.crop_pad >= height.min(width) {
            return Err(Error::Parameter(format!(
                "crop padding {} must be below half of {}x{}",
                self.crop_pad, height, width
            )));
        }
        Ok(())
    }
}

/// Augment a CHW image. Random draws, in order, from a ChaCha8 stream seeded
/// with `seed`: one uniform `f64` for the flip decision; the brightness offset
/// from `[-b, b]` if `b > 0`; the vertical then horizontal crop shift from
/// `[-k, k]` if `k > 0`. The flip is applied first, then the shifted crop,
/// then the offset, then clamping to [0,1].
pub fn augment<T: Scalar>(image: &Tensor<T>, ops: &AugmentOps, seed: u64) -> Result<Tensor<T>> {
    let [c, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::dim("augment", format!("expected CHW image, got {:?}", image.shape()))),
    };
    ops.validate(h, w)?;
    let mut r = rng(seed);
    let flip = r.random::<f64>() < ops.flip_probability;
    let offset = if ops.brightness > 0.0 { r.random_range(-ops.brightness..=ops.brightness) } else { 0.0 };
    let k = ops.crop_pad as i64;
    let (dy, dx) = if k > 0 { (r.random_range(-k..=k), r.random_range(-k..=k)) } else { (0, 0) };
    let offset = T::from_f64_lossy(offset);
    let src = image.data();
    let mut out = vec![T::zero(); src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as i64 + dy;
                let sx = x as i64 + dx;
                let v = if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                    T::zero()
                } else {
                    let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                    src[(ch * h + sy as usize) * w + sx]
                };
                out[(ch * h + y) * w + x] = (v + offset).max(T::zero()).min(T::one());
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}
