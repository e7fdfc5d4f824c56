use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    MobilenetV3Large,
    TinyTest,
}

/// Channel widths per scale.
///
/// `encoder` lists E at 1/2, 1/4, 1/8 and 1/16; `decoder` lists D at 1/16, 1/8, 1/4, 1/2 and 1/1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub encoder: [usize; 4],
    pub aspp: usize,
    pub decoder: [usize; 5],
}

/// Encoder widths fixed by the MobileNetV3-Large layer table.
pub const MOBILENET_ENCODER: [usize; 4] = [16, 24, 40, 960];

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::MobilenetV3Large,
            encoder: MOBILENET_ENCODER,
            aspp: 128,
            decoder: [128, 80, 40, 32, 16],
        }
    }
}

impl ModelConfig {
    pub fn tiny_test() -> Self {
        ModelConfig {
            backbone: BackboneKind::TinyTest,
            encoder: [4, 6, 8, 16],
            aspp: 8,
            decoder: [8, 8, 8, 8, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.iter().chain(&self.decoder).any(|&c| c == 0) || self.aspp == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if let Some(odd) = self.decoder[..4].iter().find(|&&d| d % 2 != 0) {
            return Err(Error::Config(format!(
                "decoder width {odd} at a recurrent scale must be even for the half-channel split"
            )));
        }
        if self.decoder[0] != self.aspp {
            return Err(Error::Config(format!(
                "bottleneck width {} must equal the aspp width {}",
                self.decoder[0], self.aspp
            )));
        }
        if self.backbone == BackboneKind::MobilenetV3Large && self.encoder != MOBILENET_ENCODER {
            return Err(Error::Config(format!(
                "mobilenet_v3_large produces encoder widths {MOBILENET_ENCODER:?}, got {:?}",
                self.encoder
            )));
        }
        Ok(())
    }

    /// Hidden-state channels at 1/16, 1/8, 1/4, 1/2.
    pub fn hidden_channels(&self) -> [usize; 4] {
        [self.decoder[0] / 2, self.decoder[1] / 2, self.decoder[2] / 2, self.decoder[3] / 2]
    }
}
