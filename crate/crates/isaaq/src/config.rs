//! Run configuration files.

use std::path::Path;

use isaaq_core::corpus::QuestionKind;
use isaaq_core::encoder::EncoderSpec;
use isaaq_core::retrieval::{RetrieverConfig, RetrieverKind};
use isaaq_core::train::TrainConfig;
use isaaq_core::vision::{DiagramFeaturizer, GridHistogram, MAX_ROIS};
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

/// Configs shipped with the crate, by short name.
pub const SHIPPED: [(&str, &str); 3] = [
    ("tf", include_str!("../configs/tf.toml")),
    ("text_mc", include_str!("../configs/text_mc.toml")),
    ("diagram_mc", include_str!("../configs/diagram_mc.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    #[serde(default = "default_positions")]
    pub max_positions: usize,
    #[serde(default)]
    pub pooler: bool,
}

fn default_positions() -> usize {
    512
}

impl EncoderShape {
    pub fn spec(&self, vocab_size: usize, dropout: f64) -> EncoderSpec {
        EncoderSpec {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ffn: self.ffn,
            max_positions: self.max_positions,
            dropout,
            pooler: self.pooler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionSection {
    pub max_rois: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder: EncoderShape,
    pub retrieval: RetrievalSection,
    pub vision: VisionSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| Error::Toml { path: origin.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A shipped config name (`tf`, `text_mc`, `diagram_mc`) or a file path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some((_, text)) = SHIPPED.iter().find(|(n, _)| *n == name_or_path) {
            return Self::parse(text, Path::new(name_or_path));
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        Self::parse(&text, path)
    }

    pub fn shipped(task: QuestionKind) -> Self {
        let name = match task {
            QuestionKind::TrueFalse => "tf",
            QuestionKind::TextMc => "text_mc",
            QuestionKind::DiagramMc => "diagram_mc",
        };
        Self::load(name).expect("shipped configs are valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.encoder.spec(4, self.train.dropout).validate()?;
        RetrieverConfig::new(self.retrieval.n, isaaq_core::retrieval::Scope::WholeCorpus)?;
        if self.vision.max_rois == 0 {
            return Err(isaaq_core::Error::Config("vision.max_rois must be at least 1".into()).into());
        }
        if self.vision.feature_dim != GridHistogram::default().dim() {
            return Err(isaaq_core::Error::Config(format!(
                "vision.feature_dim {} does not match the built-in featurizer ({})",
                self.vision.feature_dim,
                GridHistogram::default().dim()
            ))
            .into());
        }
        Ok(())
    }

    /// Paper-parity checks on top of [`RunConfig::validate`].
    pub fn validate_parity(&self) -> Result<()> {
        self.train.validate_parity()?;
        if self.vision.max_rois != MAX_ROIS {
            return Err(isaaq_core::Error::Config(format!("max_rois {} differs from {MAX_ROIS}", self.vision.max_rois)).into());
        }
        Ok(())
    }

    pub fn retriever(&self, kind: RetrieverKind) -> RetrieverConfig {
        RetrieverConfig { n: self.retrieval.n, ..RetrieverConfig::for_kind(kind) }
    }
}
