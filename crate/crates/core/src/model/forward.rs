use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spec::{CorrectorWeights, ModelSpec, Positions, LN_EPS};
use crate::error::{Error, Result};
use crate::numkit::{Array, AttentionLayout, Dropout, Real, Tape, Var};
use crate::seed;
use crate::wordpiece::PAD_ID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Right-padded batch of token sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl SeqBatch {
    pub fn new(seqs: &[&[u32]], spec: &ModelSpec) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if len == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("sequences must hold at least one token"));
        }
        if len > spec.max_len {
            return Err(Error::invalid(format!(
                "sequence of {len} tokens exceeds max_len {}",
                spec.max_len
            )));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            for &t in s.iter() {
                if t as usize >= spec.vocab_size {
                    return Err(Error::invalid(format!(
                        "token id {t} out of range for vocabulary of {}",
                        spec.vocab_size
                    )));
                }
                ids.push(t as usize);
            }
            ids.extend(std::iter::repeat_n(PAD_ID as usize, len - s.len()));
        }
        Ok(Self {
            ids,
            lens: seqs.iter().map(|s| s.len()).collect(),
            batch: seqs.len(),
            len,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }
}

/// Parameters recorded as leaves on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new<T: Real>(tape: &mut Tape<T>, w: &CorrectorWeights<T>) -> Self {
        let vars = w
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Self { vars }
    }

    /// Uses already-recorded leaves, e.g. when differentiating numerically.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Hands out a distinct seeded dropout configuration per application site.
pub struct DropSites {
    seed: u64,
    next: u64,
    p: f64,
    train: bool,
}

impl DropSites {
    pub fn new(p: f64, mode: Mode, seed: u64) -> Self {
        Self {
            seed,
            next: 0,
            p,
            train: mode == Mode::Train,
        }
    }

    pub fn site(&mut self) -> Dropout {
        self.next += 1;
        Dropout {
            p: self.p,
            seed: seed::mix(self.seed, self.next),
            train: self.train,
        }
    }
}

pub fn sinusoid(len: usize, hidden: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * hidden];
    for pos in 0..len {
        for i in 0..hidden {
            let k = (i / 2) as f64 * 2.0 / hidden as f64;
            let angle = pos as f64 / 10000f64.powf(k);
            pe[pos * hidden + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

struct Net<'a, T: Real> {
    tape: &'a mut Tape<T>,
    p: &'a Bound,
    spec: &'a ModelSpec,
    drops: &'a mut DropSites,
}

impl<T: Real> Net<'_, T> {
    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p.get(&format!("{prefix}.weight"))?;
        let b = self.p.get(&format!("{prefix}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p.get(&format!("{prefix}.gain"))?;
        let b = self.p.get(&format!("{prefix}.bias"))?;
        Ok(self.tape.layer_norm(x, g, b, LN_EPS)?)
    }

    fn embed(&mut self, seqs: &SeqBatch, stack: &str) -> Result<Var> {
        let h = self.spec.hidden;
        let table = self.p.get("embeddings.token")?;
        let tok = self.tape.gather(table, &seqs.ids)?;
        let x = match self.spec.positions {
            Positions::Sinusoidal => {
                let tok = self.tape.scale(tok, (h as f64).sqrt());
                let pe = sinusoid(seqs.len, h);
                let mut tiled = Vec::with_capacity(seqs.rows() * h);
                for _ in 0..seqs.batch {
                    tiled.extend(pe.iter().map(|&x| T::of(x)));
                }
                let pe = self.tape.leaf(Array::new(&[seqs.rows(), h], tiled)?);
                self.tape.add(tok, pe)?
            }
            Positions::Learned => {
                let table = self.p.get("embeddings.position")?;
                let pos: Vec<usize> = (0..seqs.batch).flat_map(|_| 0..seqs.len).collect();
                let pos = self.tape.gather(table, &pos)?;
                self.tape.add(tok, pos)?
            }
        };
        let x = self.norm(x, &format!("{stack}.embed_norm"))?;
        let d = self.drops.site();
        Ok(self.tape.dropout(x, d))
    }

    /// Multi-head attention sub-layer with residual connection and
    /// post-normalization.
    fn attention(&mut self, x: Var, memory: Var, prefix: &str, layout: AttentionLayout) -> Result<Var> {
        let q = self.linear(x, &format!("{prefix}.q"))?;
        let k = self.linear(memory, &format!("{prefix}.k"))?;
        let v = self.linear(memory, &format!("{prefix}.v"))?;
        let d = self.drops.site();
        let a = self.tape.attention(q, k, v, layout, d)?;
        let o = self.linear(a, &format!("{prefix}.o"))?;
        let d = self.drops.site();
        let o = self.tape.dropout(o, d);
        let r = self.tape.add(x, o)?;
        self.norm(r, &format!("{prefix}.norm"))
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let hdn = self.linear(x, &format!("{prefix}.in"))?;
        let hdn = self.tape.gelu(hdn);
        let o = self.linear(hdn, &format!("{prefix}.out"))?;
        let d = self.drops.site();
        let o = self.tape.dropout(o, d);
        let r = self.tape.add(x, o)?;
        self.norm(r, &format!("{prefix}.norm"))
    }

    fn encode(&mut self, src: &SeqBatch) -> Result<Var> {
        let mut x = self.embed(src, "encoder")?;
        let layout = AttentionLayout {
            batch: src.batch,
            q_len: src.len,
            k_len: src.len,
            heads: self.spec.heads,
            key_lengths: src.lens.clone(),
            causal: false,
        };
        for l in 0..self.spec.layers {
            x = self.attention(x, x, &format!("encoder.{l}.self_attn"), layout.clone())?;
            x = self.ffn(x, &format!("encoder.{l}.ffn"))?;
        }
        Ok(x)
    }

    fn decode(&mut self, memory: Var, src: &SeqBatch, tgt: &SeqBatch) -> Result<Var> {
        if src.batch != tgt.batch {
            return Err(Error::invalid("source and target batch sizes differ"));
        }
        let mut x = self.embed(tgt, "decoder")?;
        let heads = self.spec.heads;
        let self_layout = AttentionLayout {
            batch: tgt.batch,
            q_len: tgt.len,
            k_len: tgt.len,
            heads,
            key_lengths: tgt.lens.clone(),
            causal: true,
        };
        let cross_layout = AttentionLayout {
            batch: tgt.batch,
            q_len: tgt.len,
            k_len: src.len,
            heads,
            key_lengths: src.lens.clone(),
            causal: false,
        };
        for l in 0..self.spec.layers {
            x = self.attention(x, x, &format!("decoder.{l}.self_attn"), self_layout.clone())?;
            x = self.attention(x, memory, &format!("decoder.{l}.cross_attn"), cross_layout.clone())?;
            x = self.ffn(x, &format!("decoder.{l}.ffn"))?;
        }
        Ok(x)
    }

    fn logits(&mut self, x: Var) -> Result<Var> {
        let table = self.p.get("embeddings.token")?;
        let b = self.p.get("output.bias")?;
        let z = self.tape.matmul_bt(x, table)?;
        Ok(self.tape.add_row(z, b)?)
    }
}

/// Encoder output rows `[batch * src_len, H]`.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    spec: &ModelSpec,
    src: &SeqBatch,
    drops: &mut DropSites,
) -> Result<Var> {
    Net { tape, p, spec, drops }.encode(src)
}

/// Decoder logits `[batch * tgt_len, V]` given encoder memory.
pub fn decode<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    spec: &ModelSpec,
    memory: Var,
    src: &SeqBatch,
    tgt: &SeqBatch,
    drops: &mut DropSites,
) -> Result<Var> {
    let mut net = Net { tape, p, spec, drops };
    let x = net.decode(memory, src, tgt)?;
    net.logits(x)
}

/// Encoder-only hidden states projected onto the tied embedding table, used
/// for masked-token pretraining of an encoder checkpoint.
pub fn encoder_logits<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    spec: &ModelSpec,
    src: &SeqBatch,
    drops: &mut DropSites,
    bias: Var,
) -> Result<Var> {
    let mut net = Net { tape, p, spec, drops };
    let x = net.encode(src)?;
    let table = net.p.get("embeddings.token")?;
    let z = net.tape.matmul_bt(x, table)?;
    Ok(net.tape.add_row(z, bias)?)
}

/// Logits `[|tgt_prefix|, V]` for one source and one target prefix.
pub fn forward<T: Real>(
    spec: &ModelSpec,
    w: &CorrectorWeights<T>,
    src_ids: &[u32],
    tgt_prefix_ids: &[u32],
    mode: Mode,
    seed: u64,
) -> Result<Array<T>> {
    let src = SeqBatch::new(&[src_ids], spec)?;
    let tgt = SeqBatch::new(&[tgt_prefix_ids], spec)?;
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, w);
    let mut drops = DropSites::new(spec.dropout, mode, seed);
    let memory = encode(&mut tape, &p, spec, &src, &mut drops)?;
    let logits = decode(&mut tape, &p, spec, memory, &src, &tgt, &mut drops)?;
    Ok(tape.value(logits).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub smoothing: f64,
    pub exclude_pad: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.1,
            exclude_pad: true,
        }
    }
}

/// Tape targets: `None` marks positions excluded from the loss.
pub fn loss_targets(targets: &[u32], cfg: &LossConfig) -> Vec<Option<usize>> {
    targets
        .iter()
        .map(|&t| {
            if cfg.exclude_pad && t == PAD_ID {
                None
            } else {
                Some(t as usize)
            }
        })
        .collect()
}

/// Mean over non-pad positions of `-sum_i q_i log p_i` with
/// `q = (1 - eps) * onehot + eps / V`.
pub fn label_smoothed_loss<T: Real>(logits: &Array<T>, targets: &[u32], cfg: &LossConfig) -> Result<f64> {
    if targets.len() != logits.rows() {
        return Err(Error::invalid(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    let mut tape = Tape::<T>::new();
    let z = tape.leaf(logits.clone());
    let l = tape.cross_entropy(z, &loss_targets(targets, cfg), cfg.smoothing)?;
    Ok(tape.value(l).data()[0].f64())
}
