use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ctc::{ctc_logprob, log_add};
use super::lattice::FrameLattice;
use super::nbest::{NBestHyp, NBestList};
use crate::error::{Error, Result};
use crate::ngram::{NgramModel, BOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the language-model log-probability.
    pub lambda: f64,
    pub width: usize,
    /// Added once per word.
    pub word_bonus: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lambda: 0.5, width: 16, word_bonus: 0.0 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("fusion.width", "must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("fusion.lambda", "must be finite and non-negative"));
        }
        if !self.word_bonus.is_finite() {
            return Err(Error::config("fusion.word_bonus", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Prefix {
    text: String,
    pb: f64,
    pnb: f64,
    /// Language-model log-probability of the completed words.
    lm: f64,
    words: usize,
}

impl Prefix {
    fn acoustic(&self) -> f64 {
        log_add(self.pb, self.pnb)
    }
}

fn weighted(lambda: f64, lm: f64) -> f64 {
    // no language model term at all when its weight is zero, even for
    // impossible events
    if lambda == 0.0 {
        0.0
    } else {
        lambda * lm
    }
}

struct Scorer<'a> {
    lm: Option<&'a NgramModel>,
    cfg: &'a FusionConfig,
}

impl Scorer<'_> {
    /// Language-model log-probability of the last word of `words`.
    fn word(&self, words: &[&str]) -> f64 {
        match (self.lm, words.split_last()) {
            (Some(lm), Some((w, prev))) => {
                let ctx: Vec<&str> = std::iter::once(BOS).chain(prev.iter().copied()).collect();
                lm.cond_logprob(&ctx, w)
            }
            _ => 0.0,
        }
    }

    fn partial(&self, p: &Prefix) -> f64 {
        p.acoustic() + weighted(self.cfg.lambda, p.lm) + self.cfg.word_bonus * p.words as f64
    }
}

/// Prefix beam search over a character lattice with a word language model
/// applied whenever a word is completed, i.e. when a space follows a
/// non-space symbol, and once more for the final word and end of sentence.
///
/// Returns up to `width` hypotheses ordered by
/// `acoustic + lambda * lm + word_bonus * words` (ties by text), where
/// `acoustic` is recomputed over all alignments of the final text and `lm`
/// is the full sentence log-probability.
pub fn fused_beam_search(lattice: &FrameLattice, lm: Option<&NgramModel>, cfg: &FusionConfig) -> Result<NBestList> {
    cfg.validate()?;
    let scorer = Scorer { lm, cfg };
    let mut beam = vec![Prefix { text: String::new(), pb: 0.0, pnb: f64::NEG_INFINITY, lm: 0.0, words: 0 }];
    for t in 0..lattice.frames() {
        let row = lattice.frame(t);
        let mut next: Vec<Prefix> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for p in &beam {
            let total = p.acoustic();
            let i = slot(&mut next, &mut index, &scorer, p, None);
            next[i].pb = log_add(next[i].pb, total + row[0]);
            let last = p.text.chars().last();
            for (c, &lp) in row.iter().enumerate().skip(1) {
                let ch = lattice.symbol(c).expect("column within alphabet");
                let j = slot(&mut next, &mut index, &scorer, p, Some(ch));
                if last == Some(ch) {
                    next[j].pnb = log_add(next[j].pnb, p.pb + lp);
                    let i = index[&p.text];
                    next[i].pnb = log_add(next[i].pnb, p.pnb + lp);
                } else {
                    next[j].pnb = log_add(next[j].pnb, total + lp);
                }
            }
        }
        let mut scored: Vec<(f64, Prefix)> = next.into_iter().map(|p| (scorer.partial(&p), p)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.text.cmp(&b.1.text)));
        scored.truncate(cfg.width);
        beam = scored.into_iter().map(|(_, p)| p).collect();
    }

    let mut hyps = Vec::with_capacity(beam.len());
    for p in beam {
        let acoustic = ctc_logprob(lattice, &p.text)?;
        let lm_total = lm.map_or(0.0, |m| m.logprob(&p.text));
        let words = p.text.split_whitespace().count();
        let fused = acoustic + weighted(cfg.lambda, lm_total) + cfg.word_bonus * words as f64;
        hyps.push(NBestHyp { text: p.text, acoustic, lm: lm_total, fused, rescore: None });
    }
    let mut list = NBestList { hyps, rescore_weight: None };
    list.sort();
    Ok(list)
}

/// Index of `parent` extended by `ch` in the next beam, creating the entry
/// with its language-model score when new.
fn slot(
    next: &mut Vec<Prefix>,
    index: &mut HashMap<String, usize>,
    scorer: &Scorer,
    parent: &Prefix,
    ch: Option<char>,
) -> usize {
    let mut text = parent.text.clone();
    text.extend(ch);
    if let Some(&i) = index.get(&text) {
        return i;
    }
    let (mut lm, mut words) = (parent.lm, parent.words);
    if ch == Some(' ') && parent.text.chars().last().is_some_and(|c| c != ' ') {
        let ws: Vec<&str> = parent.text.split_whitespace().collect();
        lm += scorer.word(&ws);
        words += 1;
    }
    index.insert(text.clone(), next.len());
    next.push(Prefix { text, pb: f64::NEG_INFINITY, pnb: f64::NEG_INFINITY, lm, words });
    next.len() - 1
}
