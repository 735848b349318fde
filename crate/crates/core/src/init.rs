//! Random initialization and transfer of pretrained encoder weights into
//! either stack of a corrector.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::spec::{attention_shapes, ffn_shapes, CorrectorWeights, ModelSpec};
use crate::numkit::Array;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Random,
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitPlan {
    pub encoder_source: Source,
    pub decoder_source: Source,
    pub checkpoint: Option<PathBuf>,
    pub std: f64,
    pub seed: u64,
    /// Initialize decoder cross-attention from the checkpoint self-attention
    /// of the same layer. When off, cross-attention stays random.
    pub duplicate_cross_attention: bool,
}

impl Default for InitPlan {
    fn default() -> Self {
        Self {
            encoder_source: Source::Random,
            decoder_source: Source::Random,
            checkpoint: None,
            std: 0.02,
            seed: 0,
            duplicate_cross_attention: true,
        }
    }
}

impl InitPlan {
    pub fn cell_name(&self) -> String {
        let s = |x: Source| match x {
            Source::Random => "rand",
            Source::Pretrained => "pre",
        };
        format!("{}/{}", s(self.encoder_source), s(self.decoder_source))
    }

    pub fn needs_checkpoint(&self) -> bool {
        self.encoder_source == Source::Pretrained || self.decoder_source == Source::Pretrained
    }
}

/// Where each tensor of an initialized corrector came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub sources: BTreeMap<String, String>,
    /// Tensors a pretrained side could not cover and that were drawn randomly.
    pub fallbacks: Vec<String>,
}

fn is_matrix(name: &str) -> bool {
    name.ends_with(".weight") || name.starts_with("embeddings.")
}

/// Matrices and embedding tables ~ N(0, std^2), normalization gains 1,
/// biases 0. Each tensor draws from its own stream derived from `seed` and
/// its name.
pub fn init_random(spec: &ModelSpec, std: f64, seed: u64) -> Result<CorrectorWeights> {
    spec.validate()?;
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::config("init.std", "must be positive and finite"));
    }
    let normal = Normal::new(0.0, std).map_err(|_| Error::config("init.std", "must be positive and finite"))?;
    let mut tensors = BTreeMap::new();
    for (name, shape) in spec.param_shapes() {
        tensors.insert(name.clone(), random_tensor(&name, &shape, &normal, seed));
    }
    Ok(CorrectorWeights { tensors })
}

fn random_tensor(name: &str, shape: &[usize], normal: &Normal<f64>, seed: u64) -> Array<f32> {
    let n: usize = shape.iter().product();
    let data = if is_matrix(name) {
        let mut rng = seed::rng(seed::derive(seed, name));
        (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
    } else if name.ends_with(".gain") {
        vec![1.0; n]
    } else {
        vec![0.0; n]
    };
    Array::new(shape, data).expect("manifest shape")
}

fn check_compatible(ck: &Checkpoint, spec: &ModelSpec) -> Result<()> {
    if let Some(js) = ck.meta.get("model.spec") {
        let theirs: ModelSpec = serde_json::from_str(js)?;
        // hidden-size mismatches surface as shape errors naming the tensor
        if theirs.hidden == spec.hidden && theirs.heads != spec.heads {
            return Err(Error::invalid(format!(
                "checkpoint has H={} A={}, corrector expects H={} A={}",
                theirs.hidden, theirs.heads, spec.hidden, spec.heads
            )));
        }
        if theirs.layers < spec.layers {
            return Err(Error::invalid(format!(
                "checkpoint has {} layers, corrector needs {}",
                theirs.layers, spec.layers
            )));
        }
    }
    Ok(())
}

fn check_vocab(ck: &Checkpoint, vocab_digest: &str) -> Result<()> {
    match ck.meta.get("vocab.digest") {
        Some(d) if d == vocab_digest => Ok(()),
        Some(_) => Err(Error::invalid(
            "checkpoint vocabulary differs from the corrector vocabulary; token embeddings cannot be transferred",
        )),
        None => Err(Error::invalid("checkpoint does not record its vocabulary digest")),
    }
}

type Mapping = Vec<(String, String, Vec<usize>)>;

fn copy_all(ck: &Checkpoint, map: &Mapping) -> Result<BTreeMap<String, Array<f32>>> {
    let mut out = BTreeMap::new();
    for (dst, src, shape) in map {
        out.insert(dst.clone(), ck.expect(src, shape)?.clone());
    }
    Ok(out)
}

fn encoder_mapping(spec: &ModelSpec) -> Mapping {
    spec.param_shapes()
        .into_iter()
        .filter(|(n, _)| n.starts_with("encoder.") || n.starts_with("embeddings."))
        .map(|(n, s)| (n.clone(), n, s))
        .collect()
}

fn decoder_mapping(spec: &ModelSpec, duplicate: bool) -> Mapping {
    let (h, f) = (spec.hidden, spec.ffn());
    let mut map = Vec::new();
    let from_enc = |dst: Vec<(String, Vec<usize>)>, src_prefix: &str, dst_prefix: &str| {
        dst.into_iter()
            .map(|(n, s)| {
                let src = n.replacen(dst_prefix, src_prefix, 1);
                (n, src, s)
            })
            .collect::<Mapping>()
    };
    for suffix in ["gain", "bias"] {
        map.push((format!("decoder.embed_norm.{suffix}"), format!("encoder.embed_norm.{suffix}"), vec![h]));
    }
    for l in 0..spec.layers {
        let enc_attn = format!("encoder.{l}.self_attn");
        for block in ["self_attn", "cross_attn"] {
            if block == "cross_attn" && !duplicate {
                continue;
            }
            let dst = format!("decoder.{l}.{block}");
            map.extend(from_enc(attention_shapes(&dst, h), &enc_attn, &dst));
        }
        let dst = format!("decoder.{l}.ffn");
        map.extend(from_enc(ffn_shapes(&dst, h, f), &format!("encoder.{l}.ffn"), &dst));
    }
    map
}

/// Encoder tensors and the shared token table copied bit-exactly from the
/// checkpoint. The learned position table is included when the corrector
/// uses one.
pub fn transfer_encoder(ck: &Checkpoint, spec: &ModelSpec, vocab_digest: &str) -> Result<BTreeMap<String, Array<f32>>> {
    check_compatible(ck, spec)?;
    check_vocab(ck, vocab_digest)?;
    copy_all(ck, &encoder_mapping(spec))
}

/// Decoder tensors taken from the checkpoint encoder layer by layer: the
/// self-attention block, the feed-forward block and the embedding
/// normalization. With `duplicate_cross_attention`, every cross-attention
/// block (projections and normalization) is a copy of the same layer's
/// checkpoint self-attention block.
pub fn transfer_decoder(
    ck: &Checkpoint,
    spec: &ModelSpec,
    duplicate_cross_attention: bool,
) -> Result<BTreeMap<String, Array<f32>>> {
    check_compatible(ck, spec)?;
    copy_all(ck, &decoder_mapping(spec, duplicate_cross_attention))
}

/// Builds corrector weights for one plan cell. Random tensors always come
/// from the same seeded draw, so cells differ only where a side is
/// transferred. The shared token table is transferred when either side is
/// pretrained.
pub fn apply_plan(
    spec: &ModelSpec,
    plan: &InitPlan,
    ck: Option<&Checkpoint>,
    vocab_digest: &str,
) -> Result<(CorrectorWeights, InitReport)> {
    let mut w = init_random(spec, plan.std, plan.seed)?;
    let mut report = InitReport::default();
    for name in w.tensors.keys() {
        report.sources.insert(name.clone(), "random".into());
    }
    if !plan.needs_checkpoint() {
        return Ok((w, report));
    }
    let ck = ck.ok_or_else(|| Error::config("init.checkpoint", "a pretrained side needs a checkpoint"))?;
    check_vocab(ck, vocab_digest)?;
    let mut copied: Mapping = Vec::new();
    if plan.encoder_source == Source::Pretrained {
        copied.extend(encoder_mapping(spec));
    } else {
        copied.push(("embeddings.token".into(), "embeddings.token".into(), vec![spec.vocab_size, spec.hidden]));
    }
    if plan.decoder_source == Source::Pretrained {
        copied.extend(decoder_mapping(spec, plan.duplicate_cross_attention));
        if !plan.duplicate_cross_attention {
            report.fallbacks.extend(
                w.tensors
                    .keys()
                    .filter(|n| n.starts_with("decoder.") && n.contains(".cross_attn."))
                    .cloned(),
            );
        }
    }
    check_compatible(ck, spec)?;
    for (k, v) in copy_all(ck, &copied)? {
        w.tensors.insert(k, v);
    }
    for (dst, src, _) in &copied {
        report.sources.insert(dst.clone(), format!("checkpoint:{src}"));
    }
    w.validate(spec)?;
    Ok((w, report))
}
