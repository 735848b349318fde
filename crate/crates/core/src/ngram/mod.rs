//! Word n-gram language model with interpolated absolute discounting.
//!
//! For a context `h` seen `c(h)` times:
//!
//! ```text
//! P(w | h) = max(c(h w) - d, 0) / c(h) + d * N1+(h .) / c(h) * P(w | h')
//! ```
//!
//! where `h'` drops the oldest word and `N1+(h .)` counts distinct
//! successors. Unseen contexts back off to `h'` with weight 1. The unigram
//! level interpolates with a uniform distribution over the vocabulary,
//! `</s>` and `<unk>`. With `d = 0` every seen event gets its
//! maximum-likelihood ratio and everything else probability 0.
//!
//! The fitted model is kept in backoff form: each stored n-gram carries its
//! final probability and, as a context, its backoff weight. This is exactly
//! the content of an ARPA file, so scores from a reloaded file match.

mod arpa;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

/// Log probability and log backoff weight (natural logs).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Entry {
    pub logp: f64,
    pub bow: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramModel {
    order: usize,
    discount: Option<f64>,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `tables[k]` holds n-grams of length `k + 1`.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

struct Interner {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        let mut i = Self { words: Vec::new(), ids: HashMap::new() };
        for w in [BOS, EOS, UNK] {
            i.intern(w);
        }
        i
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }
}

impl NgramModel {
    /// Fits an order-`order` model on whitespace-tokenized sentences.
    pub fn fit<S: AsRef<str>>(corpus: &[S], order: usize, discount: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::config("ngram.order", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::config("ngram.discount", "must lie in [0, 1)"));
        }
        if corpus.is_empty() {
            return Err(Error::invalid("cannot fit a language model on an empty corpus"));
        }
        let mut vocab = Interner::new();
        let sents: Vec<Vec<u32>> = corpus
            .iter()
            .map(|s| {
                let mut v = vec![BOS_ID];
                v.extend(s.as_ref().split_whitespace().map(|w| vocab.intern(w)));
                v.push(EOS_ID);
                v
            })
            .collect();
        for w in [BOS, EOS, UNK] {
            if corpus.iter().any(|s| s.as_ref().split_whitespace().any(|x| x == w)) {
                return Err(Error::invalid(format!("corpus contains the reserved token {w}")));
            }
        }

        // counts[k][ngram of length k+1]; context totals and distinct successors
        let mut counts: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new(); order];
        for s in &sents {
            for end in 1..s.len() {
                for k in 0..order.min(end + 1) {
                    let gram = s[end - k..=end].to_vec();
                    *counts[k].entry(gram).or_default() += 1.0;
                }
            }
        }
        let mut ctx: Vec<HashMap<Vec<u32>, (f64, f64)>> = vec![HashMap::new(); order];
        for (k, table) in counts.iter().enumerate() {
            for (gram, &c) in table {
                let e = ctx[k].entry(gram[..k].to_vec()).or_default();
                e.0 += c;
                e.1 += 1.0;
            }
        }

        let event_space = (vocab.words.len() - 1) as f64; // every id except <s>
        let gamma = |k: usize, h: &[u32]| -> Option<(f64, f64)> {
            ctx[k].get(h).map(|&(total, distinct)| (total, discount * distinct / total))
        };

        // Probabilities as plain values first, order by order.
        let mut probs: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new(); order];
        let (total, g0) = gamma(0, &[]).expect("non-empty corpus has unigram events");
        for id in 1..vocab.words.len() as u32 {
            let c = counts[0].get(&vec![id]).copied().unwrap_or(0.0);
            probs[0].insert(vec![id], (c - discount).max(0.0) / total + g0 / event_space);
        }
        for k in 1..order {
            let mut level = HashMap::new();
            for (gram, &c) in &counts[k] {
                let (total, g) = gamma(k, &gram[..k]).expect("context of a seen n-gram is seen");
                let lower = lookup_prob(&probs, &ctx, discount, &gram[1..k], gram[k]);
                level.insert(gram.clone(), (c - discount).max(0.0) / total + g * lower);
            }
            probs[k] = level;
        }

        let mut tables: Vec<HashMap<Vec<u32>, Entry>> = vec![HashMap::new(); order];
        tables[0].insert(vec![BOS_ID], Entry { logp: f64::NEG_INFINITY, bow: 0.0 });
        for (k, level) in probs.iter().enumerate() {
            for (gram, &p) in level {
                tables[k].insert(gram.clone(), Entry { logp: p.ln(), bow: 0.0 });
            }
        }
        for k in 0..order.saturating_sub(1) {
            for (h, &(total, distinct)) in &ctx[k + 1] {
                let e = tables[k].get_mut(h).expect("every context is a stored n-gram");
                e.bow = (discount * distinct / total).ln();
            }
        }
        Ok(Self {
            order,
            discount: Some(discount),
            words: vocab.words,
            ids: vocab.ids,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> Option<f64> {
        self.discount
    }

    /// Predictable events: every known word plus `</s>` and `<unk>`.
    pub fn event_space(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(|s| s.as_str())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word) && word != UNK && word != BOS && word != EOS
    }

    fn id(&self, w: &str) -> u32 {
        self.ids.get(w).copied().unwrap_or(UNK_ID)
    }

    /// Natural-log `P(word | context)`. The context may start with `<s>`;
    /// only its last `order - 1` words are used. Unknown words map to
    /// `<unk>`; `NEG_INFINITY` marks an impossible event.
    pub fn cond_logprob(&self, context: &[&str], word: &str) -> f64 {
        let ids: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        self.cond_ids(&ids, self.id(word))
    }

    fn cond_ids(&self, context: &[u32], w: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut h = &context[context.len() - keep..];
        let mut acc = 0.0;
        let mut key = Vec::with_capacity(self.order);
        loop {
            key.clear();
            key.extend_from_slice(h);
            key.push(w);
            if let Some(e) = self.tables[h.len()].get(&key) {
                return acc + e.logp;
            }
            if h.is_empty() {
                return f64::NEG_INFINITY;
            }
            if let Some(e) = self.tables[h.len() - 1].get(h) {
                acc += e.bow;
            }
            h = &h[1..];
        }
    }

    /// Total natural-log probability of a sentence including `</s>`.
    pub fn logprob(&self, sentence: &str) -> f64 {
        let mut ids = vec![BOS_ID];
        ids.extend(sentence.split_whitespace().map(|w| self.id(w)));
        ids.push(EOS_ID);
        (1..ids.len()).map(|i| self.cond_ids(&ids[..i], ids[i])).sum()
    }
}

/// `P(w | h)` from plain probability tables while fitting.
fn lookup_prob(
    probs: &[HashMap<Vec<u32>, f64>],
    ctx: &[HashMap<Vec<u32>, (f64, f64)>],
    discount: f64,
    h: &[u32],
    w: u32,
) -> f64 {
    let mut key = h.to_vec();
    key.push(w);
    if let Some(&p) = probs[h.len()].get(&key) {
        return p;
    }
    if h.is_empty() {
        return 0.0;
    }
    let weight = ctx[h.len()]
        .get(h)
        .map_or(1.0, |&(total, distinct)| discount * distinct / total);
    weight * lookup_prob(probs, ctx, discount, &h[1..], w)
}

/// Anything that assigns a natural-log score to a whole text.
pub trait SequenceScorer {
    fn score(&self, text: &str) -> Result<f64>;
}

impl SequenceScorer for NgramModel {
    fn score(&self, text: &str) -> Result<f64> {
        let lp = self.logprob(text);
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(Error::invalid(format!("sentence is impossible under the language model: {text:?}")))
        }
    }
}
