use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative description of a model. Serializes as flat JSON with a
/// `kind` tag of `"bcvnn"` or `"blm"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub binary: bool,
    #[serde(flatten)]
    pub arch: Architecture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Bcvnn(ConvNetConfig),
    Blm(LanguageModelConfig),
}

/// Convolutional classifier: pairs of convolutions with 2x2 max pooling
/// between pairs, global average pooling and a dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNetConfig {
    pub filter_size: usize,
    /// Filters of every convolution, two per block.
    pub channels: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub num_classes: usize,
    pub input_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageModelConfig {
    pub max_len: usize,
    pub emb_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub ff_dim: usize,
    pub mlp_units_0: usize,
    pub mlp_units_1: usize,
    pub vocab_size: usize,
}

/// Dropout after the first two dense layers of the standard classifier.
pub const HEAD_DROPOUT: [f32; 2] = [0.4, 0.3];

impl ConvNetConfig {
    pub fn full(filter_size: usize, num_classes: usize) -> Self {
        Self {
            filter_size,
            channels: vec![32, 32, 64, 64, 64, 64, 128, 128, 256, 256],
            dense_units: vec![256, 256],
            num_classes,
            input_channels: 3,
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len() / 2
    }

    /// Images must be divisible by this so every pooling step halves evenly.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.blocks() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_size % 2 == 0 || self.filter_size == 0 {
            return Err(Error::Config(format!("filter_size must be odd, got {}", self.filter_size)));
        }
        if self.channels.is_empty() || self.channels.len() % 2 != 0 {
            return Err(Error::Config(format!("channels needs an even, non-zero count, got {}", self.channels.len())));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.input_channels == 0 || self.channels.contains(&0) || self.dense_units.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

impl LanguageModelConfig {
    pub fn small() -> Self {
        Self {
            max_len: 256,
            emb_dim: 768,
            num_heads: 16,
            num_blocks: 12,
            ff_dim: 2 * 768,
            mlp_units_0: 4096,
            mlp_units_1: 2048,
            vocab_size: 30_522,
        }
    }

    pub fn large() -> Self {
        Self { emb_dim: 1024, num_blocks: 16, ff_dim: 2 * 1024, mlp_units_0: 8192, mlp_units_1: 4096, ..Self::small() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.emb_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "emb_dim {} is not divisible by num_heads {}",
                self.emb_dim, self.num_heads
            )));
        }
        let widths = [self.max_len, self.emb_dim, self.ff_dim, self.mlp_units_0, self.mlp_units_1];
        if widths.contains(&0) || self.vocab_size < 2 {
            return Err(Error::Config("layer widths must be positive and vocab_size at least 2".into()));
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.arch {
            Architecture::Bcvnn(c) => c.validate(),
            Architecture::Blm(c) => c.validate(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.arch {
            Architecture::Bcvnn(_) => "bcvnn",
            Architecture::Blm(_) => "blm",
        }
    }

    /// Named configurations: `tiny-bcvnn`, `tiny-blm`, `bcvnn` (full ladder,
    /// f = 3, 101 classes), `blm-small` and `blm-large`.
    pub fn preset(name: &str) -> Result<Self> {
        let arch = match name {
            "tiny-bcvnn" => Architecture::Bcvnn(ConvNetConfig {
                filter_size: 3,
                channels: vec![4, 4, 8, 8, 8, 8, 8, 8, 8, 8],
                dense_units: vec![32, 32],
                num_classes: 4,
                input_channels: 3,
            }),
            "bcvnn" => Architecture::Bcvnn(ConvNetConfig::full(3, 101)),
            "tiny-blm" => Architecture::Blm(LanguageModelConfig {
                max_len: 16,
                emb_dim: 64,
                num_heads: 4,
                num_blocks: 2,
                ff_dim: 128,
                mlp_units_0: 128,
                mlp_units_1: 64,
                vocab_size: 8,
            }),
            "blm-small" => Architecture::Blm(LanguageModelConfig::small()),
            "blm-large" => Architecture::Blm(LanguageModelConfig::large()),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        Ok(Self { binary: true, arch })
    }

    pub const PRESETS: [&'static str; 5] = ["tiny-bcvnn", "tiny-blm", "bcvnn", "blm-small", "blm-large"];

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid model config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
