use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ngram::SequenceScorer;

fn finite_or_null<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

/// `null` reads back as an impossible (negative infinite) score.
fn null_is_impossible<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestHyp {
    pub text: String,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_is_impossible")]
    pub acoustic: f64,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_is_impossible")]
    pub lm: f64,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_is_impossible")]
    pub fused: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescore: Option<f64>,
}

/// Hypotheses best first by the active score: the fused score, plus
/// `rescore_weight * rescore` once rescored. Equal scores order by text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub hyps: Vec<NBestHyp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescore_weight: Option<f64>,
}

impl NBestList {
    pub fn active_score(&self, h: &NBestHyp) -> f64 {
        match (self.rescore_weight, h.rescore) {
            (Some(mu), Some(r)) if mu != 0.0 => h.fused + mu * r,
            _ => h.fused,
        }
    }

    pub fn sort(&mut self) {
        let hyps = std::mem::take(&mut self.hyps);
        let mut keyed: Vec<(f64, NBestHyp)> = hyps.into_iter().map(|h| (self.active_score(&h), h)).collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.text.cmp(&b.1.text)));
        self.hyps = keyed.into_iter().map(|(_, h)| h).collect();
    }

    pub fn best(&self) -> Option<&NBestHyp> {
        self.hyps.first()
    }
}

/// Second pass: scores every hypothesis text (whitespace-normalized) with
/// `scorer` and re-sorts by `fused + mu * score`. Hypotheses the scorer
/// rejects are dropped with a warning.
pub fn rescore(mut list: NBestList, scorer: &dyn SequenceScorer, mu: f64) -> NBestList {
    let mut kept = Vec::with_capacity(list.hyps.len());
    for mut h in list.hyps.drain(..) {
        let text = h.text.split_whitespace().collect::<Vec<_>>().join(" ");
        match scorer.score(&text) {
            Ok(s) if s.is_finite() => {
                h.rescore = Some(s);
                kept.push(h);
            }
            Ok(s) => log::warn!("dropping hypothesis {:?}: rescorer returned {s}", h.text),
            Err(e) => log::warn!("dropping hypothesis {:?}: {e}", h.text),
        }
    }
    list.hyps = kept;
    list.rescore_weight = Some(mu);
    list.sort();
    list
}

/// One JSON-lines record per utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub id: String,
    #[serde(flatten)]
    pub list: NBestList,
}

pub fn to_jsonl(records: &[NBestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("n-best records serialize"));
        out.push('\n');
    }
    out
}
