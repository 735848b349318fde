use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkit::{Array, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positions {
    /// Fixed sinusoidal encodings; token embeddings are scaled by `sqrt(H)`.
    Sinusoidal,
    /// A learned `[max_len, H]` table shared by encoder and decoder.
    Learned,
}

/// Architecture hyperparameters of one corrector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default = "default_positions")]
    pub positions: Positions,
}

fn default_ffn_mult() -> usize {
    4
}

fn default_positions() -> Positions {
    Positions::Sinusoidal
}

pub const LN_EPS: f64 = 1e-5;

/// Sub-layer ordering recorded in checkpoint manifests.
pub const NORM_PLACEMENT: &str = "post";

impl ModelSpec {
    pub fn new(layers: usize, hidden: usize, heads: usize, vocab_size: usize) -> Self {
        Self {
            layers,
            hidden,
            heads,
            dropout: 0.1,
            vocab_size,
            max_len: 64,
            ffn_mult: 4,
            positions: Positions::Sinusoidal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(format!("model.{f}"), m));
        if self.layers == 0 {
            return bad("layers", "must be at least 1".into());
        }
        if self.heads == 0 || self.hidden == 0 {
            return bad("heads", "hidden size and head count must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(
                "heads",
                format!("hidden size H={} must be divisible by head count A={}", self.hidden, self.heads),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("P_drop={} must lie in [0, 1)", self.dropout));
        }
        if self.vocab_size < 5 {
            return bad("vocab_size", "vocabulary must hold the reserved symbols and at least one piece".into());
        }
        if self.max_len < 2 {
            return bad("max_len", "must be at least 2".into());
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult", "must be positive".into());
        }
        Ok(())
    }

    pub fn ffn(&self) -> usize {
        self.ffn_mult * self.hidden
    }

    /// Canonical `(name, shape)` manifest, named `stack.layer.block.tensor`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f, v) = (self.hidden, self.ffn(), self.vocab_size);
        let mut out = vec![("embeddings.token".to_string(), vec![v, h])];
        if self.positions == Positions::Learned {
            out.push(("embeddings.position".into(), vec![self.max_len, h]));
        }
        for stack in ["encoder", "decoder"] {
            out.push((format!("{stack}.embed_norm.gain"), vec![h]));
            out.push((format!("{stack}.embed_norm.bias"), vec![h]));
            for l in 0..self.layers {
                let blocks: &[&str] = if stack == "encoder" {
                    &["self_attn"]
                } else {
                    &["self_attn", "cross_attn"]
                };
                for b in blocks {
                    out.extend(attention_shapes(&format!("{stack}.{l}.{b}"), h));
                }
                out.extend(ffn_shapes(&format!("{stack}.{l}.ffn"), h, f));
            }
        }
        out.push(("output.bias".into(), vec![v]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

pub(crate) fn attention_shapes(prefix: &str, h: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for p in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.{p}.weight"), vec![h, h]));
        out.push((format!("{prefix}.{p}.bias"), vec![h]));
    }
    out.push((format!("{prefix}.norm.gain"), vec![h]));
    out.push((format!("{prefix}.norm.bias"), vec![h]));
    out
}

pub(crate) fn ffn_shapes(prefix: &str, h: usize, f: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.in.weight"), vec![h, f]),
        (format!("{prefix}.in.bias"), vec![f]),
        (format!("{prefix}.out.weight"), vec![f, h]),
        (format!("{prefix}.out.bias"), vec![h]),
        (format!("{prefix}.norm.gain"), vec![h]),
        (format!("{prefix}.norm.bias"), vec![h]),
    ]
}

/// Corrector parameters keyed by canonical tensor name.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorWeights<T: Real = f32> {
    pub tensors: BTreeMap<String, Array<T>>,
}

impl<T: Real> CorrectorWeights<T> {
    pub fn get(&self, name: &str) -> Result<&Array<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Checks that every tensor named by `param_shapes` is present with the
    /// right shape and holds only finite values.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        for (name, shape) in spec.param_shapes() {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::TensorShape {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(Error::invalid(format!("tensor `{name}` holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CorrectorWeights<U> {
        CorrectorWeights {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

impl CorrectorWeights<f32> {
    /// Packs weights and spec into a checkpoint.
    pub fn to_checkpoint(&self, spec: &ModelSpec) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.meta.insert("kind".into(), "corrector".into());
        ck.meta.insert("model.spec".into(), serde_json::to_string(spec).expect("spec serializes"));
        ck.meta.insert("model.norm".into(), NORM_PLACEMENT.into());
        for (k, v) in &self.tensors {
            ck.insert(k.clone(), v.clone());
        }
        ck
    }

    /// Reads the `ModelSpec` recorded in a corrector checkpoint and its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(ModelSpec, Self)> {
        let spec_json = ck
            .meta
            .get("model.spec")
            .ok_or_else(|| Error::invalid("checkpoint has no model.spec record"))?;
        let spec: ModelSpec = serde_json::from_str(spec_json)?;
        spec.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in spec.param_shapes() {
            tensors.insert(name.clone(), ck.expect(&name, &shape)?.clone());
        }
        let w = CorrectorWeights { tensors };
        w.validate(&spec)?;
        Ok((spec, w))
    }
}
