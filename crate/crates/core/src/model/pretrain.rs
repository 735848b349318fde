//! Masked-token pretraining of a standalone encoder, producing checkpoints
//! that the init module can transfer into a corrector.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{encoder_logits, loss_targets, Bound, DropSites, LossConfig, Mode, SeqBatch};
use super::spec::{CorrectorWeights, ModelSpec, NORM_PLACEMENT};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::init::init_random;
use crate::numkit::{Array, Tape};
use crate::optim::{novograd_step, poly_decay, OptimizerConfig, OptimizerState};
use crate::seed;
use crate::wordpiece::{EOS_ID, PAD_ID, UNK_ID};

const FIRST_PIECE: u32 = EOS_ID + 1;

pub const MLM_BIAS: &str = "mlm.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub optim: OptimizerConfig,
    pub mask_prob: f64,
    pub batch_tokens: usize,
    pub std: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimizerConfig { total_steps: 200, ..Default::default() },
            mask_prob: 0.15,
            batch_tokens: 1024,
            std: 0.02,
            seed: 0,
        }
    }
}

/// Picks a random subset of positions (at least one) as prediction targets.
/// A picked position is replaced by the unknown-piece id (which doubles as
/// the mask symbol) with probability 0.8, by a random non-reserved piece
/// with probability 0.1, and left unchanged otherwise, so every output
/// position has to keep its token identity. Targets are PAD where unpicked.
pub fn mask_sentence(ids: &[u32], prob: f64, vocab_size: usize, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = seed::rng(seed);
    let mut picked: Vec<bool> = ids.iter().map(|_| rng.random::<f64>() < prob).collect();
    if !picked.contains(&true) && !ids.is_empty() {
        let i = rng.random_range(0..ids.len());
        picked[i] = true;
    }
    let mut input = ids.to_vec();
    let mut target = vec![PAD_ID; ids.len()];
    for i in (0..ids.len()).filter(|&i| picked[i]) {
        target[i] = ids[i];
        let r: f64 = rng.random();
        if r < 0.8 {
            input[i] = UNK_ID;
        } else if r < 0.9 && vocab_size > FIRST_PIECE as usize {
            input[i] = rng.random_range(FIRST_PIECE..vocab_size as u32);
        }
    }
    (input, target)
}

fn encoder_subset(w: CorrectorWeights) -> BTreeMap<String, Array<f32>> {
    w.tensors
        .into_iter()
        .filter(|(n, _)| n.starts_with("encoder.") || n.starts_with("embeddings."))
        .collect()
}

/// Trains an encoder on masked-piece prediction and returns it as a
/// checkpoint using corrector tensor names, tagged with the vocabulary digest.
pub fn pretrain_encoder(
    spec: &ModelSpec,
    vocab_digest: &str,
    sentences: &[Vec<u32>],
    cfg: &PretrainConfig,
) -> Result<(Checkpoint, Vec<f64>)> {
    cfg.optim.validate()?;
    let sentences: Vec<&Vec<u32>> = sentences.iter().filter(|s| !s.is_empty() && s.len() <= spec.max_len).collect();
    if sentences.is_empty() {
        return Err(Error::invalid("no sentences to pretrain on"));
    }
    let mut params = encoder_subset(init_random(spec, cfg.std, cfg.seed)?);
    params.insert(MLM_BIAS.into(), Array::zeros(&[spec.vocab_size]));
    let mut state = OptimizerState::new();
    let loss_cfg = LossConfig { smoothing: 0.0, exclude_pad: true };
    let per_batch = (cfg.batch_tokens / spec.max_len.min(sentences.iter().map(|s| s.len()).max().unwrap_or(1))).max(1);
    let mut losses = Vec::new();
    let mut cursor = 0usize;
    while state.step < cfg.optim.total_steps {
        let step = state.step;
        let mut inputs = Vec::new();
        let mut targets_by_row = Vec::new();
        for k in 0..per_batch.min(sentences.len()) {
            let s = sentences[(cursor + k) % sentences.len()];
            let (i, t) = mask_sentence(s, cfg.mask_prob, spec.vocab_size, seed::mix(cfg.seed, (step * per_batch + k) as u64));
            inputs.push(i);
            targets_by_row.push(t);
        }
        cursor = (cursor + per_batch) % sentences.len();
        let src = SeqBatch::new(&inputs.iter().map(|s| s.as_slice()).collect::<Vec<_>>(), spec)?;
        let mut targets = vec![PAD_ID; src.rows()];
        for (b, t) in targets_by_row.iter().enumerate() {
            targets[b * src.len..b * src.len + t.len()].copy_from_slice(t);
        }
        let w = CorrectorWeights { tensors: params.clone() };
        let mut tape = Tape::<f32>::new();
        let bound = Bound::new(&mut tape, &w);
        let mut drops = DropSites::new(spec.dropout, Mode::Train, seed::mix(cfg.seed ^ 0x6d6c6d, step as u64));
        let bias = bound.get(MLM_BIAS)?;
        let logits = encoder_logits(&mut tape, &bound, spec, &src, &mut drops, bias)?;
        let l = tape.cross_entropy(logits, &loss_targets(&targets, &loss_cfg), 0.0)?;
        losses.push(tape.value(l).data()[0] as f64);
        let mut grads = tape.backward(l)?;
        let mut g = BTreeMap::new();
        for (name, &v) in bound.iter() {
            if let Some(x) = grads.take(v) {
                g.insert(name.clone(), x);
            }
        }
        let lr = poly_decay(step, &cfg.optim);
        novograd_step(&mut params, &g, &mut state, &cfg.optim, lr)?;
    }
    let mut ck = Checkpoint::new();
    ck.meta.insert("kind".into(), "encoder".into());
    ck.meta.insert("model.spec".into(), serde_json::to_string(spec)?);
    ck.meta.insert("model.norm".into(), NORM_PLACEMENT.into());
    ck.meta.insert("vocab.digest".into(), vocab_digest.into());
    for (k, v) in params {
        ck.insert(k, v);
    }
    Ok((ck, losses))
}
