use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::ChannelConfig;
use crate::corpus::CorpusConfig;
use crate::datagen::{DataGenConfig, Variant};
use crate::decoding::FusionConfig;
use crate::error::{Error, Result};
use crate::model::pretrain::PretrainConfig;
use crate::model::{LossConfig, ModelSpec, Positions, TrainConfig};
use crate::optim::OptimizerConfig;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Tiny,
    Small,
}

/// Corrector architecture; the vocabulary size comes from the vocab file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub ffn_mult: usize,
    pub positions: Positions,
}

impl ArchConfig {
    pub fn spec(&self, vocab_size: usize) -> ModelSpec {
        ModelSpec {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            dropout: self.dropout,
            vocab_size,
            max_len: self.max_len,
            ffn_mult: self.ffn_mult,
            positions: self.positions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    pub discount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub fusion: FusionConfig,
    /// Width of the acoustic-only beam whose n-best list is rescored.
    pub rescore_width: usize,
    pub rescore_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub std: f64,
    pub duplicate_cross_attention: bool,
}

/// Memorization race between init cells: steps until a small fixed set of
/// pairs is fitted below `target_loss`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceConfig {
    pub pairs: usize,
    pub target_loss: f64,
    pub optim: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    /// Init cells such as `rand/rand` or `pre/rand`.
    pub cells: Vec<String>,
    pub race: RaceConfig,
    pub histogram_bin: f64,
}

/// One document holding every stage's settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Sentences held out from the end of the generated corpus.
    pub heldout: usize,
    pub channel: ChannelConfig,
    pub datagen: DataGenConfig,
    pub vocab_size: usize,
    pub lm: LmConfig,
    pub decode: DecodeConfig,
    pub model: ArchConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    /// Training-data variant used by `train` unless overridden.
    pub variant: Variant,
    pub correct_batch: usize,
    pub ablate: AblateConfig,
}

impl PipelineConfig {
    pub fn preset(scale: Scale) -> Self {
        let small = scale == Scale::Small;
        let pick = |t: usize, s: usize| if small { s } else { t };
        let model = ArchConfig {
            layers: pick(1, 2),
            hidden: pick(16, 64),
            heads: pick(2, 4),
            dropout: 0.1,
            max_len: 48,
            ffn_mult: 4,
            positions: Positions::Sinusoidal,
        };
        let std = 1.0 / (model.hidden as f64).sqrt();
        Self {
            seed: 0,
            corpus: CorpusConfig { sentences: pick(160, 2400), ..CorpusConfig::default() },
            heldout: pick(40, 400),
            channel: ChannelConfig::default(),
            datagen: DataGenConfig { folds: pick(4, 10), ..DataGenConfig::default() },
            vocab_size: pick(150, 400),
            lm: LmConfig { order: 3, discount: 0.1 },
            decode: DecodeConfig {
                fusion: FusionConfig { width: pick(4, 16), ..FusionConfig::default() },
                rescore_width: pick(4, 16),
                rescore_weight: 0.5,
            },
            model,
            init: InitConfig { std, duplicate_cross_attention: true },
            train: TrainConfig {
                optim: OptimizerConfig { lr0: 0.01, total_steps: pick(30, 2500), ..OptimizerConfig::default() },
                loss: LossConfig::default(),
                batch_tokens: pick(512, 2048),
                log_every: pick(10, 250),
                ..TrainConfig::default()
            },
            pretrain: PretrainConfig {
                optim: OptimizerConfig { lr0: 0.01, total_steps: pick(20, 1000), ..OptimizerConfig::default() },
                batch_tokens: pick(512, 2048),
                std,
                ..PretrainConfig::default()
            },
            variant: Variant::Both,
            correct_batch: 64,
            ablate: AblateConfig {
                variants: Variant::ALL.to_vec(),
                cells: ["rand/rand", "pre/rand", "rand/pre", "pre/pre"].map(String::from).to_vec(),
                race: RaceConfig {
                    pairs: 32,
                    target_loss: 0.1,
                    optim: OptimizerConfig { total_steps: pick(40, 2000), ..OptimizerConfig::default() },
                },
                histogram_bin: 0.1,
            },
        }
    }

    /// Preset for `scale` with the JSON document `overlay` merged on top.
    pub fn from_overlay(scale: Scale, overlay: Option<&str>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(scale))?;
        if let Some(text) = overlay {
            let patch: Value = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
            merge(&mut base, patch);
        }
        serde_json::from_value(base).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Copies the top-level seed into every stage.
    pub fn with_seed(mut self, s: u64) -> Self {
        self.seed = s;
        self.corpus.seed = seed::derive(s, "corpus");
        self.channel.seed = seed::derive(s, "channel");
        self.datagen.seed = seed::derive(s, "datagen");
        self.train.seed = seed::derive(s, "train");
        self.pretrain.seed = seed::derive(s, "pretrain");
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.channel.validate()?;
        self.datagen.validate()?;
        self.decode.fusion.validate()?;
        self.train.optim.validate()?;
        self.pretrain.optim.validate()?;
        self.ablate.race.optim.validate()?;
        self.model.spec(self.vocab_size).validate()?;
        if self.heldout == 0 || self.heldout + self.datagen.folds > self.corpus.sentences {
            return Err(Error::config("heldout", "need 1 <= heldout and enough sentences left for every fold"));
        }
        if self.vocab_size < 5 {
            return Err(Error::config("vocab_size", "must be at least 5"));
        }
        if self.lm.order == 0 || !(0.0..1.0).contains(&self.lm.discount) {
            return Err(Error::config("lm", "need order >= 1 and discount in [0, 1)"));
        }
        if self.decode.rescore_width == 0 {
            return Err(Error::config("decode.rescore_width", "must be at least 1"));
        }
        if !(self.init.std > 0.0) {
            return Err(Error::config("init.std", "must be positive"));
        }
        if self.correct_batch == 0 {
            return Err(Error::config("correct_batch", "must be positive"));
        }
        if !(self.ablate.histogram_bin > 0.0) {
            return Err(Error::config("ablate.histogram_bin", "must be positive"));
        }
        for c in &self.ablate.cells {
            super::stages::parse_cell(c)?;
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON rendering.
    pub fn digest(&self) -> String {
        super::manifest::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
