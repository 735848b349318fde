//! NovoGrad with per-tensor gradient-norm normalization and polynomial
//! learning-rate decay.
//!
//! Update for one tensor with gradient `g`:
//!
//! ```text
//! v <- b2 * v + (1 - b2) * |g|^2          (first step: v <- |g|^2)
//! m <- b1 * m + g / (sqrt(v) + eps) + wd * w
//! w <- w - lr * m
//! ```
//!
//! The default `b2 = 0.25` is far lower than the usual Adam-style value, so
//! the second moment tracks the latest gradient norms closely.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkit::Array;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub poly_power: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            beta1: 0.95,
            beta2: 0.25,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps: 1000,
            poly_power: 2.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("optim.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optim.beta2", "must lie in [0, 1)"));
        }
        if self.lr0 <= 0.0 || !self.lr0.is_finite() {
            return Err(Error::config("optim.lr0", "must be positive"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("optim.total_steps", "must be at least 1"));
        }
        if self.eps < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("optim", "eps and weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// `lr0 * (1 - step / total)^power`, reaching 0 at and beyond `total_steps`.
pub fn poly_decay(step: usize, cfg: &OptimizerConfig) -> f64 {
    if step >= cfg.total_steps {
        return 0.0;
    }
    cfg.lr0 * (1.0 - step as f64 / cfg.total_steps as f64).powf(cfg.poly_power)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub tensors: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores moments as `optim.m.<name>` / `optim.v.<name>` tensors.
    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.meta.insert("optim.step".into(), self.step.to_string());
        for (name, mo) in &self.tensors {
            ck.insert(format!("optim.m.{name}"), Array::from_vec(mo.m.clone()));
            ck.insert(format!("optim.v.{name}"), Array::from_vec(vec![mo.v as f32]));
        }
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let step = match ck.meta.get("optim.step") {
            Some(s) => s.parse().map_err(|_| Error::invalid("optim.step is not an integer"))?,
            None => return Ok(Self::new()),
        };
        let mut tensors = BTreeMap::new();
        for (k, t) in &ck.tensors {
            if let Some(name) = k.strip_prefix("optim.m.") {
                let v = ck.get(&format!("optim.v.{name}"))?;
                tensors.insert(
                    name.to_string(),
                    Moments { m: t.data().to_vec(), v: v.data()[0] as f64 },
                );
            }
        }
        Ok(Self { step, tensors })
    }
}

/// One NovoGrad update of every parameter. Tensors without an entry in
/// `grads` are treated as having zero gradient.
pub fn novograd_step(
    params: &mut BTreeMap<String, Array<f32>>,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    for (name, g) in grads {
        let w = params
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if g.len() != w.len() {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected: w.shape().to_vec(),
                found: vec![g.len()],
            });
        }
    }
    let first = state.step == 0;
    for (name, w) in params.iter_mut() {
        let g = grads.get(name);
        let norm2: f64 = g.map_or(0.0, |g| g.iter().map(|&x| (x as f64) * (x as f64)).sum());
        let mo = state
            .tensors
            .entry(name.clone())
            .or_insert_with(|| Moments { m: vec![0.0; w.len()], v: 0.0 });
        if mo.m.len() != w.len() {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected: w.shape().to_vec(),
                found: vec![mo.m.len()],
            });
        }
        mo.v = if first { norm2 } else { cfg.beta2 * mo.v + (1.0 - cfg.beta2) * norm2 };
        let denom = mo.v.sqrt() + cfg.eps;
        let b1 = if first { 0.0 } else { cfg.beta1 };
        for (i, (wi, mi)) in w.data_mut().iter_mut().zip(mo.m.iter_mut()).enumerate() {
            let gi = g.map_or(0.0, |g| g[i] as f64);
            let step = if denom > 0.0 { gi / denom } else { 0.0 };
            let m = b1 * *mi as f64 + step + cfg.weight_decay * *wi as f64;
            *mi = m as f32;
            *wi = (*wi as f64 - lr * m) as f32;
        }
    }
    state.step += 1;
    Ok(())
}
