//! Seeded synthetic text corpus: a small phrase-structure grammar over a
//! closed vocabulary, used wherever the pipeline needs clean transcripts.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const DETS: &[&str] = &["the", "a", "this", "that", "every", "some", "my", "your", "our", "their"];
const NAMES: &[&str] = &["anna", "ben", "clara", "david", "emma", "frank", "grace", "henry", "lucy", "mark"];
const ADJS: &[&str] = &[
    "old", "new", "small", "large", "quiet", "bright", "dark", "happy", "tired", "clever", "green", "heavy",
    "quick", "gentle", "strange", "warm", "cold", "empty", "busy", "famous",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "house", "garden", "river", "teacher", "doctor", "window", "table", "letter", "train", "city",
    "forest", "story", "market", "bridge", "student", "kitchen", "station", "mountain", "painter", "farmer",
    "village", "island", "bottle", "picture", "engine", "school", "morning", "evening", "music", "stone",
    "flower", "ship", "road", "friend", "child", "machine", "office", "lamp",
];
const VERBS: &[&str] = &[
    "sees", "likes", "finds", "builds", "paints", "opens", "carries", "watches", "follows", "visits", "cleans",
    "moves", "reads", "writes", "holds", "leaves", "helps", "calls", "brings", "keeps", "answers", "remembers",
    "describes", "notices", "repairs",
];
const INTRANSITIVE: &[&str] = &[
    "sleeps", "waits", "laughs", "arrives", "listens", "works", "sings", "rests", "returns", "wanders",
];
const ADVS: &[&str] = &[
    "slowly", "quickly", "often", "never", "today", "again", "quietly", "together", "later", "early",
];
const PREPS: &[&str] = &["near", "behind", "under", "across", "inside", "beside", "before", "after", "with", "without"];
const CONJS: &[&str] = &["and", "but", "while", "because", "although"];
const MISC: &[&str] = &["it's", "there's", "very", "not", "still", "just"];

/// Word-count bounds for generated sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { sentences: 2400, min_words: 5, max_words: 12, seed: 0 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sentences == 0 {
            return Err(Error::config("corpus.sentences", "must be positive"));
        }
        if self.min_words < 3 || self.min_words > self.max_words {
            return Err(Error::config("corpus.min_words", "need 3 <= min_words <= max_words"));
        }
        Ok(())
    }
}

/// Every word the grammar can produce.
pub fn vocabulary() -> BTreeSet<&'static str> {
    [DETS, NAMES, ADJS, NOUNS, VERBS, INTRANSITIVE, ADVS, PREPS, CONJS, MISC].concat().into_iter().collect()
}

fn pick(rng: &mut ChaCha8Rng, words: &[&'static str]) -> &'static str {
    words.choose(rng).expect("word lists are non-empty")
}

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
    if rng.random_bool(0.2) {
        out.push(pick(rng, NAMES));
        return;
    }
    out.push(pick(rng, DETS));
    if rng.random_bool(0.3) {
        out.push("very");
    }
    if rng.random_bool(0.5) {
        out.push(pick(rng, ADJS));
    }
    out.push(pick(rng, NOUNS));
}

fn clause(rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
    match rng.random_range(0..10) {
        0 => out.extend(["it's", pick(rng, ADJS)]),
        1 => {
            out.push("there's");
            noun_phrase(rng, out);
        }
        _ => {
            noun_phrase(rng, out);
            if rng.random_bool(0.15) {
                out.push(pick(rng, &["still", "just", "not"]));
            }
            if rng.random_bool(0.3) {
                out.push(pick(rng, INTRANSITIVE));
            } else {
                out.push(pick(rng, VERBS));
                noun_phrase(rng, out);
            }
        }
    }
    if rng.random_bool(0.4) {
        out.push(pick(rng, PREPS));
        noun_phrase(rng, out);
    }
    if rng.random_bool(0.3) {
        out.push(pick(rng, ADVS));
    }
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> String {
    loop {
        let mut words = Vec::with_capacity(cfg.max_words);
        clause(rng, &mut words);
        while words.len() < cfg.min_words || (words.len() < cfg.max_words && rng.random_bool(0.25)) {
            words.push(pick(rng, CONJS));
            clause(rng, &mut words);
        }
        if (cfg.min_words..=cfg.max_words).contains(&words.len()) {
            return words.join(" ");
        }
    }
}

/// `cfg.sentences` sentences drawn from the grammar, deterministic per seed.
pub fn generate(cfg: &CorpusConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "corpus"));
    Ok((0..cfg.sentences).map(|_| sentence(&mut rng, cfg)).collect())
}
