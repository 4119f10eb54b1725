use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel of the first convolution inside each C2f bottleneck.
pub const BOTTLENECK_KERNEL: usize = 3;

/// Conv → BatchNorm → SiLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbsBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl CbsBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        CbsBlockSpec { in_channels, out_channels, kernel, stride }
    }

    /// Same-padding for an odd kernel.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Spec(format!("CBS block {self:?} has a zero extent")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Spec(format!("CBS kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Split / bottleneck chain / concat / fuse block. `features` is the block's
/// input and output width; `growth` sets the width of each half.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2fBlockSpec {
    pub features: usize,
    pub growth: f64,
    pub bottleneck_count: usize,
}

impl C2fBlockSpec {
    pub fn new(features: usize, growth: f64, bottleneck_count: usize) -> Self {
        C2fBlockSpec { features, growth, bottleneck_count }
    }

    pub fn hidden(&self) -> usize {
        (self.features as f64 * self.growth).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 {
            return Err(Error::Spec("C2f features must be positive".into()));
        }
        if !(self.growth > 0.0 && self.growth <= 1.0) {
            return Err(Error::Spec(format!("C2f growth must lie in (0,1], got {}", self.growth)));
        }
        if self.hidden() < 1 {
            return Err(Error::Spec(format!("C2f hidden width round({}·{}) is zero", self.features, self.growth)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub downsample: CbsBlockSpec,
    pub c2f: C2fBlockSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stem: CbsBlockSpec,
    pub stages: Vec<StageSpec>,
    pub embedding_dim: usize,
}

impl Default for BackboneSpec {
    /// Desk-scale backbone for 3×32×32 inputs.
    fn default() -> Self {
        BackboneSpec {
            stem: CbsBlockSpec::new(3, 16, 3, 1),
            stages: vec![
                StageSpec { downsample: CbsBlockSpec::new(16, 32, 3, 2), c2f: C2fBlockSpec::new(32, 0.5, 1) },
                StageSpec { downsample: CbsBlockSpec::new(32, 64, 3, 2), c2f: C2fBlockSpec::new(64, 0.5, 1) },
            ],
            embedding_dim: 64,
        }
    }
}

impl BackboneSpec {
    pub fn in_channels(&self) -> usize {
        self.stem.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        if self.stem.kernel != 3 {
            return Err(Error::Spec(format!("stem kernel must be 3, got {}", self.stem.kernel)));
        }
        let mut channels = self.stem.out_channels;
        for (i, stage) in self.stages.iter().enumerate() {
            stage.downsample.validate()?;
            stage.c2f.validate()?;
            if stage.downsample.in_channels != channels {
                return Err(Error::Spec(format!(
                    "stage {i} downsample expects {} channels but receives {channels}",
                    stage.downsample.in_channels
                )));
            }
            if stage.c2f.features != stage.downsample.out_channels {
                return Err(Error::Spec(format!(
                    "stage {i} C2f has {} features but downsample emits {}",
                    stage.c2f.features, stage.downsample.out_channels
                )));
            }
            channels = stage.c2f.features;
        }
        if self.embedding_dim != channels {
            return Err(Error::Spec(format!(
                "embedding_dim {} does not match final channel count {channels}",
                self.embedding_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub class_count: usize,
    pub input_dim: usize,
}

impl HeadSpec {
    pub fn new(class_count: usize, input_dim: usize) -> Self {
        HeadSpec { class_count, input_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Spec(format!("head needs at least 2 classes, got {}", self.class_count)));
        }
        if self.input_dim == 0 {
            return Err(Error::Spec("head input_dim must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backbone_validates() {
        BackboneSpec::default().validate().unwrap();
    }

    #[test]
    fn six_by_six_stem_is_rejected() {
        let mut spec = BackboneSpec::default();
        spec.stem.kernel = 5;
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
        spec.stem.kernel = 6;
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn broken_channel_chain_is_rejected() {
        let mut spec = BackboneSpec::default();
        spec.stages[1].downsample.in_channels = 16;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("stage 1"), "{err}");
    }

    #[test]
    fn growth_out_of_range() {
        assert!(C2fBlockSpec::new(32, 0.0, 1).validate().is_err());
        assert!(C2fBlockSpec::new(32, 1.5, 1).validate().is_err());
        assert!(C2fBlockSpec::new(1, 0.2, 1).validate().is_err());
        assert_eq!(C2fBlockSpec::new(32, 0.25, 1).hidden(), 8);
    }

    #[test]
    fn single_class_head_is_rejected() {
        assert!(HeadSpec::new(1, 64).validate().is_err());
    }
}
