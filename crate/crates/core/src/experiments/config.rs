use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::{DecoderConfig, EncoderConfig, ModelConfig, ModelMode};
use crate::tasks::{MaskingPolicy, OracleMode, TaskConfig};
use crate::trainer::{CheckpointMetric, OptimizerGroupConfig, OptimizerMode, TrainConfig};

/// Flat `key = value` run configuration. Every key is optional.
///
/// ```text
/// mode = "heads"
/// preset = "paper-cm"
/// epochs = 85
/// encoder_lr = 5e-4
/// beam_width = 5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ModelMode,
    pub preset: String,
    pub seed: u64,
    pub parallel: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub heads_lr: f64,
    pub text2text_lr: f64,
    pub optimizer_mode: OptimizerMode,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub freeze_encoder: bool,
    pub checkpoint_metric: CheckpointMetric,

    pub beam_width: usize,
    pub max_tokens: usize,

    pub max_input_len: usize,
    pub max_summary_len: usize,
    pub concept_top_k: usize,
    pub ngram_max: usize,
    pub negative_ratio: f64,
    pub mask_prob: f64,
    pub oracle_max_selected: usize,
    /// Drop extractive examples of documents without an extractive
    /// reference instead of deriving labels.
    pub oracle_disabled: bool,

    pub layers: usize,
    pub hidden: usize,
    pub attention_heads: usize,
    pub ffn_hidden: usize,
    pub decoder_hidden: usize,
    pub decoder_embed: usize,
    pub decoder_attention: usize,
    pub vocab_min_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let opt = OptimizerGroupConfig::default();
        let tasks = TaskConfig::default();
        Self {
            mode: ModelMode::Heads,
            preset: "paper-cm".into(),
            seed: 0,
            parallel: false,
            epochs: train.epochs,
            batch_size: train.batch_size,
            encoder_lr: opt.encoder_lr,
            decoder_lr: opt.decoder_lr,
            heads_lr: opt.heads_lr,
            text2text_lr: opt.text2text_lr,
            optimizer_mode: opt.mode,
            grad_clip: 1.0,
            freeze_encoder: false,
            checkpoint_metric: CheckpointMetric::MeanF1,
            beam_width: 5,
            max_tokens: 50,
            max_input_len: tasks.max_input_len,
            max_summary_len: tasks.max_summary_len,
            concept_top_k: tasks.concept_top_k,
            ngram_max: tasks.ngram_max,
            negative_ratio: tasks.negative_ratio,
            mask_prob: tasks.masking.mask_prob,
            oracle_max_selected: 3,
            oracle_disabled: false,
            layers: 2,
            hidden: 64,
            attention_heads: 4,
            ffn_hidden: 256,
            decoder_hidden: 64,
            decoder_embed: 64,
            decoder_attention: 64,
            vocab_min_count: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.task_config().masking.validate()?;
        self.model_config(16).validate()?;
        if self.max_input_len < 2 || self.max_summary_len == 0 {
            return Err(Error::Config("max_input_len must be >= 2 and max_summary_len >= 1".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            mode: self.mode,
            seed: self.seed,
            optimizers: OptimizerGroupConfig {
                encoder_lr: self.encoder_lr,
                decoder_lr: self.decoder_lr,
                heads_lr: self.heads_lr,
                text2text_lr: self.text2text_lr,
                mode: self.optimizer_mode,
            },
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            freeze_encoder: self.freeze_encoder,
            decode: DecodeConfig {
                beam_width: self.beam_width,
                max_tokens: self.max_tokens,
            },
            checkpoint_metric: self.checkpoint_metric,
            ..TrainConfig::default()
        }
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            max_input_len: self.max_input_len,
            max_summary_len: self.max_summary_len,
            concept_top_k: self.concept_top_k,
            ngram_max: self.ngram_max,
            negative_ratio: self.negative_ratio,
            masking: MaskingPolicy {
                mask_prob: self.mask_prob,
                ..MaskingPolicy::default()
            },
            oracle: if self.oracle_disabled {
                OracleMode::Disabled
            } else {
                OracleMode::Fallback {
                    max_selected: self.oracle_max_selected,
                }
            },
            ..TaskConfig::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                layers: self.layers,
                hidden: self.hidden,
                heads: self.attention_heads,
                ffn_hidden: self.ffn_hidden,
                max_len: self.max_input_len,
                vocab_size,
            },
            decoder: DecoderConfig {
                hidden: self.decoder_hidden,
                embed: self.decoder_embed,
                attention: self.decoder_attention,
            },
            mode: self.mode,
            tasks: Vec::new(),
            seed: self.seed,
        }
    }
}
