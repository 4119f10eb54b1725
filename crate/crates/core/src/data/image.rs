use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, ImageReader, RgbImage};

use super::manifest::ImageRef;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit RGB pixels, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbPixels {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbPixels {
    pub fn to_inline(&self) -> ImageRef {
        ImageRef::Inline { width: self.width, height: self.height, rgb: STANDARD.encode(&self.data) }
    }

    pub fn from_inline(width: usize, height: usize, rgb: &str) -> Result<Self> {
        let data = STANDARD
            .decode(rgb)
            .map_err(|e| Error::Ingestion { path: PathBuf::from("<inline>"), reason: format!("base64: {e}") })?;
        if data.len() != width * height * 3 {
            return Err(Error::Ingestion {
                path: PathBuf::from("<inline>"),
                reason: format!("{} bytes for a {width}x{height} RGB image", data.len()),
            });
        }
        Ok(RgbPixels { width, height, data })
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let ingest = |reason: String| Error::Ingestion { path: path.to_path_buf(), reason };
        let reader = ImageReader::open(path)
            .map_err(|e| ingest(e.to_string()))?
            .with_guessed_format()
            .map_err(|e| ingest(e.to_string()))?;
        if reader.format() != Some(ImageFormat::Png) {
            return Err(ingest(format!("unsupported format {:?}, only PNG is accepted", reader.format())));
        }
        let img = reader.decode().map_err(|e| ingest(e.to_string()))?.to_rgb8();
        Ok(RgbPixels { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| Error::Parameter("pixel buffer does not match its extents".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Ingestion { path: PathBuf::from("<memory>"), reason: e.to_string() })?;
        Ok(out.into_inner())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| Error::io(path, source))
    }

    /// Nearest-neighbour resize to `shape` = (channels, height, width) with
    /// values scaled to [0,1]. One channel averages R, G and B.
    pub fn to_tensor<T: Scalar>(&self, shape: [usize; 3]) -> Result<Tensor<T>> {
        let [c, h, w] = shape;
        if c != 1 && c != 3 {
            return Err(Error::Parameter(format!("images have 1 or 3 channels, not {c}")));
        }
        let scale = T::from_f64_lossy(1.0 / 255.0);
        let mut data = vec![T::zero(); c * h * w];
        for y in 0..h {
            let sy = y * self.height / h;
            for x in 0..w {
                let sx = x * self.width / w;
                let px = &self.data[(sy * self.width + sx) * 3..][..3];
                if c == 3 {
                    for ch in 0..3 {
                        data[(ch * h + y) * w + x] = T::from_u8(px[ch]).unwrap() * scale;
                    }
                } else {
                    let mean = px.iter().map(|&v| f64::from(v)).sum::<f64>() / 3.0;
                    data[y * w + x] = T::from_f64_lossy(mean / 255.0);
                }
            }
        }
        Tensor::from_vec([c, h, w], data)
    }
}

/// Decode a referenced image to a CHW tensor in [0,1].
pub fn load_image<T: Scalar>(image: &ImageRef, base_dir: &Path, target_shape: [usize; 3]) -> Result<Tensor<T>> {
    let pixels = match image {
        ImageRef::Path { path } => RgbPixels::read_png(&base_dir.join(path))?,
        ImageRef::Inline { width, height, rgb } => RgbPixels::from_inline(*width, *height, rgb)?,
    };
    pixels.to_tensor(target_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8) -> RgbPixels {
        RgbPixels { width: 5, height: 3, data: vec![v; 45] }
    }

    #[test]
    fn white_is_one_black_is_zero() {
        let t: Tensor<f32> = solid(255).to_tensor([3, 4, 4]).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let t: Tensor<f32> = solid(0).to_tensor([3, 4, 4]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_upscales_by_block_replication() {
        // [[W, B], [B, W]]
        let mut data = Vec::new();
        for v in [255u8, 0, 0, 255] {
            data.extend([v, v, v]);
        }
        let p = RgbPixels { width: 2, height: 2, data };
        let t: Tensor<f64> = p.to_tensor([1, 4, 4]).unwrap();
        let expected = [
            1., 1., 0., 0., //
            1., 1., 0., 0., //
            0., 0., 1., 1., //
            0., 0., 1., 1.,
        ];
        assert_eq!(t.data(), &expected);
    }

    #[test]
    fn png_round_trip_and_format_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = solid(10);
        p.data[4] = 200;
        let path = dir.path().join("x.png");
        p.write_png(&path).unwrap();
        assert_eq!(RgbPixels::read_png(&path).unwrap(), p);

        let bogus = dir.path().join("y.png");
        std::fs::write(&bogus, b"not an image at all").unwrap();
        let err = RgbPixels::read_png(&bogus).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
        assert!(err.to_string().contains("y.png"));

        let missing = load_image::<f32>(&ImageRef::Path { path: "nope.png".into() }, dir.path(), [3, 4, 4]);
        assert!(matches!(missing, Err(Error::Ingestion { .. })));
    }

    #[test]
    fn inline_round_trip() {
        let p = solid(77);
        let ImageRef::Inline { width, height, rgb } = p.to_inline() else { panic!() };
        assert_eq!(RgbPixels::from_inline(width, height, &rgb).unwrap(), p);
    }
}
