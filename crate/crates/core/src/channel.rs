//! Seeded noisy channel standing in for an acoustic model. One random edit
//! plan per (config, transcript) drives both the corrupted transcript and a
//! synthetic frame lattice, so greedy CTC decoding of the lattice reproduces
//! the corrupted transcript exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{standard_alphabet, FrameLattice};
use crate::error::{Error, Result};
use crate::seed;

const DEFAULT_TSV: &str = include_str!("../data/confusion.tsv");

/// Per-character substitution distributions. Characters without a row are
/// never substituted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(char, char, f64)>", into = "Vec<(char, char, f64)>")]
pub struct Confusion {
    rows: BTreeMap<char, Vec<(char, f64)>>,
}

impl TryFrom<Vec<(char, char, f64)>> for Confusion {
    type Error = Error;

    fn try_from(entries: Vec<(char, char, f64)>) -> Result<Self> {
        let alphabet = standard_alphabet();
        let mut rows: BTreeMap<char, Vec<(char, f64)>> = BTreeMap::new();
        for (from, to, p) in entries {
            for c in [from, to] {
                if !alphabet.contains(&c) {
                    return Err(Error::invalid(format!("confusion symbol {c:?} is outside the channel alphabet")));
                }
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("confusion probability {p} for {from:?}->{to:?} outside [0, 1]")));
            }
            let row = rows.entry(from).or_default();
            if row.iter().any(|(t, _)| *t == to) {
                return Err(Error::invalid(format!("duplicate confusion entry {from:?}->{to:?}")));
            }
            row.push((to, p));
        }
        for (c, row) in &rows {
            let s: f64 = row.iter().map(|(_, p)| p).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("confusion row for {c:?} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }
}

impl From<Confusion> for Vec<(char, char, f64)> {
    fn from(c: Confusion) -> Self {
        c.rows.into_iter().flat_map(|(f, row)| row.into_iter().map(move |(t, p)| (f, t, p))).collect()
    }
}

impl Default for Confusion {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_TSV).expect("shipped confusion table is valid")
    }
}

fn one_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    let c = it.next()?;
    it.next().is_none().then_some(c)
}

impl Confusion {
    pub fn identity() -> Self {
        Self { rows: BTreeMap::new() }
    }

    /// Parses `from <TAB> to <TAB> prob` lines; `#` starts a comment.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let what = "confusion table";
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(what, i + 1, "expected three tab-separated fields"));
            }
            let from = one_char(f[0]).ok_or_else(|| Error::parse(what, i + 1, "source must be one character"))?;
            let to = one_char(f[1]).ok_or_else(|| Error::parse(what, i + 1, "target must be one character"))?;
            let p: f64 = f[2].trim().parse().map_err(|_| Error::parse(what, i + 1, "bad probability"))?;
            entries.push((from, to, p));
        }
        Self::try_from(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (f, row) in &self.rows {
            for (t, p) in row {
                out.push_str(&format!("{f}\t{t}\t{p}\n"));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// Row of `c` with its off-diagonal mass multiplied by `strength`
    /// (capped so the row stays a distribution).
    fn scaled_row(&self, c: char, strength: f64) -> Vec<(char, f64)> {
        let Some(row) = self.rows.get(&c) else {
            return vec![(c, 1.0)];
        };
        let off: f64 = row.iter().filter(|(t, _)| *t != c).map(|(_, p)| p).sum();
        if off == 0.0 {
            return vec![(c, 1.0)];
        }
        let k = (off * strength).min(1.0) / off;
        let mut out: Vec<(char, f64)> = row.iter().filter(|(t, _)| *t != c).map(|&(t, p)| (t, p * k)).collect();
        out.push((c, 1.0 - off * k));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutout {
    /// Probability that a span deletion starts at any output character.
    pub span_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub confusion: Confusion,
    pub deletion: f64,
    pub insertion: f64,
    /// Multiplies substitution, deletion and insertion probabilities.
    pub dropout_strength: f64,
    pub cutout: Option<Cutout>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            confusion: Confusion::default(),
            deletion: 0.004,
            insertion: 0.003,
            dropout_strength: 1.0,
            cutout: None,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn noiseless() -> Self {
        Self {
            confusion: Confusion::identity(),
            deletion: 0.0,
            insertion: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("channel.{name}"), format!("{p} is not a probability")))
            }
        };
        unit("deletion", self.deletion)?;
        unit("insertion", self.insertion)?;
        if !(self.dropout_strength >= 0.0) || !self.dropout_strength.is_finite() {
            return Err(Error::config("channel.dropout_strength", "must be finite and non-negative"));
        }
        if let Some(c) = &self.cutout {
            unit("cutout.span_rate", c.span_rate)?;
            if c.min_len == 0 || c.min_len > c.max_len {
                return Err(Error::config("channel.cutout", "need 1 <= min_len <= max_len"));
            }
        }
        Ok(())
    }

    fn transcript_rng(&self, transcript: &str, stream: u64) -> ChaCha8Rng {
        seed::rng(seed::mix(seed::mix(self.seed, seed::hash_str(transcript)), stream))
    }
}

/// One output character; `source` is the clean character it replaced.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Emission {
    ch: char,
    source: Option<char>,
}

fn check_alphabet(transcript: &str) -> Result<()> {
    let alphabet = standard_alphabet();
    match transcript.chars().enumerate().find(|(_, c)| !alphabet.contains(c)) {
        Some((i, c)) => Err(Error::invalid(format!(
            "character {c:?} at position {i} is outside the channel alphabet"
        ))),
        None => Ok(()),
    }
}

fn sample(rng: &mut ChaCha8Rng, row: &[(char, f64)]) -> char {
    let mut u: f64 = rng.random();
    for &(c, p) in row {
        if u < p {
            return c;
        }
        u -= p;
    }
    row.last().expect("rows are non-empty").0
}

fn plan(cfg: &ChannelConfig, transcript: &str) -> Result<Vec<Emission>> {
    cfg.validate()?;
    check_alphabet(transcript)?;
    let mut rng = cfg.transcript_rng(transcript, 0);
    let s = cfg.dropout_strength;
    let (p_del, p_ins) = ((cfg.deletion * s).min(1.0), (cfg.insertion * s).min(1.0));
    let mut out = Vec::with_capacity(transcript.len() + 4);
    for c in transcript.chars() {
        // draws happen in a fixed order so that zero probabilities consume
        // the same stream as non-zero ones
        let del: f64 = rng.random();
        let sub = sample(&mut rng, &cfg.confusion.scaled_row(c, s));
        let ins: f64 = rng.random();
        let ins_ch = (b'a' + rng.random_range(0..26u8)) as char;
        if del >= p_del {
            out.push(Emission { ch: sub, source: (sub != c).then_some(c) });
        }
        if ins < p_ins {
            out.push(Emission { ch: ins_ch, source: None });
        }
    }
    if let Some(cut) = &cfg.cutout {
        let mut kept = Vec::with_capacity(out.len());
        let mut skip = 0usize;
        for e in out {
            let start: f64 = rng.random();
            let len = rng.random_range(cut.min_len..=cut.max_len);
            if skip > 0 {
                skip -= 1;
                continue;
            }
            if start < cut.span_rate {
                skip = len - 1;
                continue;
            }
            kept.push(e);
        }
        out = kept;
    }
    Ok(out)
}

/// Noisy rendering of `transcript`: per-character substitution, deletion and
/// insertion scaled by `dropout_strength`, then cutout span deletions.
pub fn corrupt(cfg: &ChannelConfig, transcript: &str) -> Result<String> {
    Ok(plan(cfg, transcript)?.iter().map(|e| e.ch).collect())
}

/// Frame lattice whose best path spells `corrupt(cfg, transcript)`. Each
/// emitted character spans 1-3 peaked frames; substituted characters keep
/// secondary mass on the clean character; blanks separate characters and
/// always separate repeats.
pub fn emit_lattice(cfg: &ChannelConfig, transcript: &str) -> Result<FrameLattice> {
    let emissions = plan(cfg, transcript)?;
    let alphabet = standard_alphabet();
    let classes = alphabet.len() + 1;
    let col = |c: char| alphabet.iter().position(|&a| a == c).expect("checked alphabet") + 1;
    let mut rng = cfg.transcript_rng(transcript, 1);
    let mut weights: Vec<f64> = Vec::new();
    let mut frame = |rng: &mut ChaCha8Rng, peak_col: usize, second: Option<usize>| {
        let peak = rng.random_range(0.55..0.92);
        let mut row = vec![0.0; classes];
        let mut rest = 1.0 - peak;
        if let Some(s) = second {
            let m = rest * rng.random_range(0.3..0.7);
            row[s] += m;
            rest -= m;
        }
        for x in row.iter_mut() {
            *x += rest / classes as f64;
        }
        row[peak_col] += peak;
        weights.extend_from_slice(&row);
    };
    frame(&mut rng, 0, None);
    let mut prev: Option<char> = None;
    for e in &emissions {
        let blanks = rng.random_range(0..=2usize).max(usize::from(prev == Some(e.ch)));
        for _ in 0..blanks {
            frame(&mut rng, 0, None);
        }
        let reps = rng.random_range(1..=3usize);
        for _ in 0..reps {
            frame(&mut rng, col(e.ch), e.source.map(col));
        }
        prev = Some(e.ch);
    }
    frame(&mut rng, 0, None);
    FrameLattice::from_weights(alphabet, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::ctc_greedy;

    #[test]
    fn noiseless_channel_is_identity() {
        let cfg = ChannelConfig::noiseless();
        for t in ["", "a", "hello world", "it's  odd"] {
            assert_eq!(corrupt(&cfg, t).unwrap(), t);
            assert_eq!(ctc_greedy(&emit_lattice(&cfg, t).unwrap()), t);
        }
    }

    #[test]
    fn forced_substitution() {
        let cfg = ChannelConfig {
            confusion: Confusion::from_tsv("a\tx\t1\n").unwrap(),
            ..ChannelConfig::noiseless()
        };
        assert_eq!(corrupt(&cfg, "a b a").unwrap(), "x b x");
        assert_eq!(ctc_greedy(&emit_lattice(&cfg, "a b a").unwrap()), "x b x");
    }

    #[test]
    fn rejects_foreign_characters_and_bad_tables() {
        assert!(corrupt(&ChannelConfig::default(), "naïve").is_err());
        assert!(corrupt(&ChannelConfig::default(), "abc1").is_err());
        assert!(Confusion::from_tsv("a\tb\t0.5\n").is_err());
        assert!(Confusion::from_tsv("a\tB\t1\n").is_err());
    }

    #[test]
    fn default_table_round_trips_through_json_and_tsv() {
        let c = Confusion::default();
        assert_eq!(Confusion::from_tsv(&c.to_tsv()).unwrap(), c);
        let cfg = ChannelConfig::default();
        let back: ChannelConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
