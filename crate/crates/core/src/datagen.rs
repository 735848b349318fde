//! Parallel-corpus generation: K-fold channel assignment, dropout and cutout
//! rounds, WER filtering and deduplication.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::{corrupt, ChannelConfig, Cutout};
use crate::error::{Error, Result};
use crate::evalkit::wer;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataGenConfig {
    pub folds: usize,
    pub n_dropout_rounds: usize,
    /// Channel noise multiplier used by the dropout rounds.
    pub dropout_strength: f64,
    pub cutout: bool,
    pub cutout_spans: Cutout,
    pub wer_max: f64,
    pub dedup: bool,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_dropout_rounds: 3,
            dropout_strength: 1.5,
            cutout: true,
            cutout_spans: Cutout { span_rate: 0.02, min_len: 2, max_len: 6 },
            wer_max: 0.5,
            dedup: true,
            seed: 0,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("datagen.folds", "need at least 2 folds"));
        }
        if !(self.wer_max > 0.0 && self.wer_max <= 1.0) {
            return Err(Error::config("datagen.wer_max", "must lie in (0, 1]"));
        }
        if !(self.dropout_strength >= 0.0) || !self.dropout_strength.is_finite() {
            return Err(Error::config("datagen.dropout_strength", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Base,
    /// A noisier round; carries the round's channel seed.
    Dropout(u64),
    Cutout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelPair {
    /// Corrupted text.
    pub source: String,
    /// Clean text.
    pub target: String,
    pub wer: f64,
    pub fold: usize,
    pub tag: Tag,
    /// Seed of the channel that produced `source`.
    pub seed: u64,
}

/// Training-set variants obtained by slicing generated pairs by tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TenFold,
    Cutout,
    Dropout,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::TenFold, Variant::Cutout, Variant::Dropout, Variant::Both];

    pub fn label(self) -> &'static str {
        match self {
            Variant::TenFold => "10-fold",
            Variant::Cutout => "+cutout",
            Variant::Dropout => "+dropout",
            Variant::Both => "+both",
        }
    }

    pub fn admits(self, tag: Tag) -> bool {
        match (self, tag) {
            (_, Tag::Base) | (Variant::Both, _) => true,
            (Variant::Cutout, Tag::Cutout) => true,
            (Variant::Dropout, Tag::Dropout(_)) => true,
            _ => false,
        }
    }
}

/// Fold id of every corpus position; fold sizes differ by at most one.
pub fn kfold_split<T>(corpus: &[T], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > corpus.len() {
        return Err(Error::invalid(format!("cannot split {} sentences into {k} folds", corpus.len())));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "kfold")));
    let mut folds = vec![0; corpus.len()];
    for (rank, &i) in order.iter().enumerate() {
        folds[i] = rank % k;
    }
    Ok(folds)
}

/// `k` channels sharing `base`'s noise settings with independent seeds.
pub fn fold_channels(base: &ChannelConfig, k: usize, seed: u64) -> Vec<ChannelConfig> {
    (0..k)
        .map(|f| ChannelConfig { seed: seed::mix(seed::derive(seed, "fold-channel"), f as u64), ..base.clone() })
        .collect()
}

fn pair(target: &str, ch: &ChannelConfig, fold: usize, tag: Tag, index: usize) -> Result<ParallelPair> {
    let raw = corrupt(ch, target).map_err(|e| Error::invalid(format!("sentence {index}: {e}")))?;
    let source = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let w = wer(target, &source).rate().expect("targets are non-empty");
    Ok(ParallelPair { source, target: target.to_string(), wer: w, fold, tag, seed: ch.seed })
}

/// Corrupts every sentence with its fold's channel: one base round, then
/// `n_dropout_rounds` noisier rounds with distinct seeds, then a cutout round
/// when enabled. Output is sentence-major. No filtering happens here.
pub fn generate<S: AsRef<str>>(corpus: &[S], cfg: &DataGenConfig, channels: &[ChannelConfig]) -> Result<Vec<ParallelPair>> {
    cfg.validate()?;
    if channels.len() != cfg.folds {
        return Err(Error::invalid(format!("{} fold channels given for {} folds", channels.len(), cfg.folds)));
    }
    for (i, s) in corpus.iter().enumerate() {
        if s.as_ref().split_whitespace().next().is_none() {
            return Err(Error::invalid(format!("sentence {i} is empty")));
        }
    }
    let folds = kfold_split(corpus, cfg.folds, cfg.seed)?;
    let per_sentence = 1 + cfg.n_dropout_rounds + usize::from(cfg.cutout);
    let mut out = Vec::with_capacity(corpus.len() * per_sentence);
    for (i, (s, &f)) in corpus.iter().zip(&folds).enumerate() {
        let target = s.as_ref().split_whitespace().collect::<Vec<_>>().join(" ");
        let ch = &channels[f];
        out.push(pair(&target, ch, f, Tag::Base, i)?);
        for r in 0..cfg.n_dropout_rounds {
            let noisy = ChannelConfig {
                dropout_strength: ch.dropout_strength * cfg.dropout_strength,
                seed: seed::mix(ch.seed, r as u64 + 1),
                ..ch.clone()
            };
            out.push(pair(&target, &noisy, f, Tag::Dropout(noisy.seed), i)?);
        }
        if cfg.cutout {
            let cut = ChannelConfig {
                cutout: Some(cfg.cutout_spans.clone()),
                seed: seed::mix(ch.seed, u64::MAX),
                ..ch.clone()
            };
            out.push(pair(&target, &cut, f, Tag::Cutout, i)?);
        }
    }
    Ok(out)
}

/// Drops pairs with `wer > wer_max` and, when `dedup`, repeated
/// (source, target) pairs, keeping first occurrences in order.
pub fn filter_dedup(pairs: Vec<ParallelPair>, wer_max: f64, dedup: bool) -> Vec<ParallelPair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|p| p.wer <= wer_max)
        .filter(|p| !dedup || seen.insert((p.source.clone(), p.target.clone())))
        .collect()
}

/// Pairs of one variant, filtered and deduplicated.
pub fn variant(pairs: &[ParallelPair], v: Variant, wer_max: f64, dedup: bool) -> Vec<ParallelPair> {
    let sliced = pairs.iter().filter(|p| v.admits(p.tag)).cloned().collect();
    filter_dedup(sliced, wer_max, dedup)
}

pub fn write_jsonl(path: &Path, pairs: &[ParallelPair]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ParallelPair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand(source: &str, target: &str) -> ParallelPair {
        let w = wer(target, source).rate().unwrap();
        ParallelPair { source: source.into(), target: target.into(), wer: w, fold: 0, tag: Tag::Base, seed: 0 }
    }

    #[test]
    fn kfold_examples() {
        let corpus = ["a", "b", "c", "d", "e", "f"];
        let folds = kfold_split(&corpus, 3, 1).unwrap();
        for f in 0..3 {
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 2);
        }
        let mut single = kfold_split(&corpus, 6, 1).unwrap();
        single.sort();
        assert_eq!(single, [0, 1, 2, 3, 4, 5]);
        assert_eq!(kfold_split(&corpus, 3, 1).unwrap(), folds);
        assert!(kfold_split(&corpus, 7, 1).is_err());
        let big: Vec<usize> = (0..50).collect();
        assert_ne!(kfold_split(&big, 5, 1).unwrap(), kfold_split(&big, 5, 2).unwrap());
    }

    #[test]
    fn wer_filter_is_strict() {
        let half = hand("a x c y", "a b c d");
        let over = hand("a x y z e", "a b c d e");
        assert_eq!(half.wer, 0.5);
        assert_eq!(over.wer, 0.6);
        let kept = filter_dedup(vec![half.clone(), over], 0.5, true);
        assert_eq!(kept, [half]);
    }

    #[test]
    fn dedup_and_clean_corpus() {
        let p = hand("a b", "a b");
        assert_eq!(filter_dedup(vec![p.clone(), p.clone()], 0.5, true).len(), 1);
        assert_eq!(filter_dedup(vec![p.clone(), p.clone()], 0.5, false).len(), 2);
        let clean = vec![hand("a", "a"), hand("b c", "b c")];
        assert_eq!(filter_dedup(clean.clone(), 0.5, true), clean);
    }

    #[test]
    fn round_counts() {
        let corpus = ["the cat sat", "a dog ran off", "it's here now", "we go"];
        let base = ChannelConfig::default();
        let cfg = DataGenConfig { folds: 2, n_dropout_rounds: 0, cutout: false, ..DataGenConfig::default() };
        let pairs = generate(&corpus, &cfg, &fold_channels(&base, 2, 3)).unwrap();
        assert_eq!(pairs.len(), corpus.len());
        let cfg = DataGenConfig { folds: 2, n_dropout_rounds: 2, cutout: true, ..DataGenConfig::default() };
        let pairs = generate(&corpus, &cfg, &fold_channels(&base, 2, 3)).unwrap();
        assert_eq!(pairs.len(), corpus.len() * 4);
        for p in &pairs {
            assert_eq!(p.wer, wer(&p.target, &p.source).rate().unwrap());
        }
    }

    #[test]
    fn channel_errors_name_the_sentence() {
        let cfg = DataGenConfig { folds: 2, ..DataGenConfig::default() };
        let chans = fold_channels(&ChannelConfig::default(), 2, 0);
        let err = generate(&["fine", "bad 7"], &cfg, &chans).unwrap_err();
        assert!(err.to_string().contains("sentence 1"), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let mut p = hand("a x", "a b");
        p.tag = Tag::Dropout(42);
        write_jsonl(&path, std::slice::from_ref(&p)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"tag\":{\"dropout\":42}"), "{text}");
        assert_eq!(read_jsonl(&path).unwrap(), [p]);
    }
}
