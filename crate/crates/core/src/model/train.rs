use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forward::{decode, encode, loss_targets, Bound, DropSites, LossConfig, Mode, SeqBatch};
use super::spec::{CorrectorWeights, ModelSpec};
use crate::error::{Error, Result};
use crate::numkit::{Real, Tape};
use crate::optim::{novograd_step, poly_decay, OptimizerConfig, OptimizerState};
use crate::seed;
use crate::wordpiece::{BOS_ID, EOS_ID};

/// A training pair of piece ids without sequence markers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl Pair {
    pub fn encoder_input(&self) -> Vec<u32> {
        let mut v = self.src.clone();
        v.push(EOS_ID);
        v
    }

    pub fn decoder_input(&self) -> Vec<u32> {
        std::iter::once(BOS_ID).chain(self.tgt.iter().copied()).collect()
    }

    pub fn decoder_output(&self) -> Vec<u32> {
        let mut v = self.tgt.clone();
        v.push(EOS_ID);
        v
    }

    /// Whether both sides fit the model once markers are added.
    pub fn fits(&self, spec: &ModelSpec) -> bool {
        self.src.len() < spec.max_len && self.tgt.len() < spec.max_len
    }
}

/// Groups pair indices into batches whose padded source plus target token
/// count stays within `budget`. Pairs are shuffled, bucketed by length, and
/// the batch order is shuffled again.
pub fn token_batches(pairs: &[Pair], budget: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| (pairs[i].src.len().max(pairs[i].tgt.len()), pairs[i].src.len()));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let (mut max_s, mut max_t) = (0, 0);
    for i in order {
        let s = max_s.max(pairs[i].src.len() + 1);
        let t = max_t.max(pairs[i].tgt.len() + 1);
        if !cur.is_empty() && (cur.len() + 1) * (s + t) > budget {
            batches.push(std::mem::take(&mut cur));
            max_s = pairs[i].src.len() + 1;
            max_t = pairs[i].tgt.len() + 1;
        } else {
            max_s = s;
            max_t = t;
        }
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(&mut rng);
    batches
}

/// Mean label-smoothed loss of a batch and the gradient of every parameter.
pub fn batch_loss<T: Real>(
    spec: &ModelSpec,
    w: &CorrectorWeights<T>,
    batch: &[&Pair],
    loss: &LossConfig,
    mode: Mode,
    seed: u64,
) -> Result<(f64, BTreeMap<String, Vec<T>>)> {
    let srcs: Vec<Vec<u32>> = batch.iter().map(|p| p.encoder_input()).collect();
    let tins: Vec<Vec<u32>> = batch.iter().map(|p| p.decoder_input()).collect();
    let src = SeqBatch::new(&srcs.iter().map(|s| s.as_slice()).collect::<Vec<_>>(), spec)?;
    let tgt = SeqBatch::new(&tins.iter().map(|s| s.as_slice()).collect::<Vec<_>>(), spec)?;
    let mut targets = vec![crate::wordpiece::PAD_ID; tgt.rows()];
    for (b, p) in batch.iter().enumerate() {
        for (t, &id) in p.decoder_output().iter().enumerate() {
            targets[b * tgt.len + t] = id;
        }
    }
    let mut tape = Tape::<T>::new();
    let bound = Bound::new(&mut tape, w);
    let mut drops = DropSites::new(spec.dropout, mode, seed);
    let memory = encode(&mut tape, &bound, spec, &src, &mut drops)?;
    let logits = decode(&mut tape, &bound, spec, memory, &src, &tgt, &mut drops)?;
    let l = tape.cross_entropy(logits, &loss_targets(&targets, loss), loss.smoothing)?;
    let value = tape.value(l).data()[0].f64();
    let mut grads = tape.backward(l)?;
    let mut out = BTreeMap::new();
    for (name, &v) in bound.iter() {
        if let Some(g) = grads.take(v) {
            out.insert(name.clone(), g);
        }
    }
    Ok((value, out))
}

/// Eval-mode loss over `pairs`, averaged per target token.
pub fn eval_loss(spec: &ModelSpec, w: &CorrectorWeights, pairs: &[Pair], loss: &LossConfig, budget: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in token_batches(pairs, budget, 0) {
        let batch: Vec<&Pair> = b.iter().map(|&i| &pairs[i]).collect();
        let n: usize = batch.iter().map(|p| p.tgt.len() + 1).sum();
        let (l, _) = batch_loss(spec, w, &batch, loss, Mode::Eval, 0)?;
        total += l * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimizerConfig,
    pub loss: LossConfig,
    pub batch_tokens: usize,
    pub seed: u64,
    /// Stop as soon as a step's batch loss falls below this value.
    pub target_loss: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimizerConfig::default(),
            loss: LossConfig::default(),
            batch_tokens: 2048,
            seed: 0,
            target_loss: None,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// 1-based step whose loss first fell below the target.
    pub reached_target_at: Option<usize>,
}

pub struct Trainer {
    pub spec: ModelSpec,
    pub weights: CorrectorWeights,
    pub state: OptimizerState,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(spec: ModelSpec, weights: CorrectorWeights, cfg: TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.optim.validate()?;
        weights.validate(&spec)?;
        Ok(Self { spec, weights, state: OptimizerState::new(), cfg })
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&Pair]) -> Result<f64> {
        let lr = poly_decay(self.state.step, &self.cfg.optim);
        let step_seed = seed::mix(self.cfg.seed, self.state.step as u64);
        let (loss, grads) = batch_loss(&self.spec, &self.weights, batch, &self.cfg.loss, Mode::Train, step_seed)?;
        if !loss.is_finite() {
            return Err(Error::invalid(format!("non-finite loss at step {}", self.state.step)));
        }
        novograd_step(&mut self.weights.tensors, &grads, &mut self.state, &self.cfg.optim, lr)?;
        Ok(loss)
    }

    /// Runs up to `optim.total_steps` steps over shuffled token batches.
    pub fn run(&mut self, pairs: &[Pair]) -> Result<TrainReport> {
        if let Some(p) = pairs.iter().find(|p| !p.fits(&self.spec)) {
            return Err(Error::invalid(format!(
                "pair with {} source / {} target pieces exceeds max_len {}",
                p.src.len(),
                p.tgt.len(),
                self.spec.max_len
            )));
        }
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        let mut report = TrainReport::default();
        let mut epoch = 0u64;
        while self.state.step < self.cfg.optim.total_steps {
            let batches = token_batches(pairs, self.cfg.batch_tokens, seed::mix(self.cfg.seed, epoch));
            for b in batches {
                if self.state.step >= self.cfg.optim.total_steps {
                    break;
                }
                let batch: Vec<&Pair> = b.iter().map(|&i| &pairs[i]).collect();
                let loss = self.step(&batch)?;
                report.losses.push(loss);
                let step = self.state.step;
                if self.cfg.log_every > 0 && step.is_multiple_of(self.cfg.log_every) {
                    log::info!("step {step} loss {loss:.4}");
                }
                if let Some(t) = self.cfg.target_loss {
                    if loss < t {
                        report.reached_target_at = Some(step);
                        return Ok(report);
                    }
                }
            }
            epoch += 1;
        }
        Ok(report)
    }
}
