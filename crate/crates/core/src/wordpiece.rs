//! WordPiece-style subword vocabulary: frequency-driven pair-merge
//! construction, greedy longest-match-first encoding, and decoding back to
//! normalized text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const RESERVED: [&str; 4] = [UNK, PAD, BOS, EOS];
pub const CONTINUATION: &str = "##";

pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

/// Characters kept by [`normalize`]; everything else is dropped.
pub fn in_normal_alphabet(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\''
}

/// Lowercases, drops characters outside the normalization alphabet and
/// collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        let w: String = word
            .chars()
            .flat_map(char::to_lowercase)
            .filter(|&c| in_normal_alphabet(c))
            .collect();
        if w.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&w);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    alphabet: BTreeSet<char>,
    longest: usize,
}

impl Vocab {
    /// Builds a vocabulary of at most `target_size` pieces from `corpus`.
    ///
    /// Starts from the reserved symbols plus every corpus character as both an
    /// initial and a continuation piece, then repeatedly merges the most
    /// frequent adjacent symbol pair (ties broken by the lexicographically
    /// smallest pair) until the size target is met or no pair is left.
    pub fn build<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("vocabulary corpus is empty"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in corpus {
            for w in normalize(line.as_ref()).split(' ').filter(|w| !w.is_empty()) {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
        let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
        let floor = RESERVED.len() + 2 * alphabet.len();
        if target_size < floor {
            return Err(Error::invalid(format!(
                "target size {target_size} cannot hold the {} reserved symbols and {} alphabet characters ({floor} pieces)",
                RESERVED.len(),
                alphabet.len()
            )));
        }
        let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        pieces.extend(alphabet.iter().map(|c| c.to_string()));
        pieces.extend(alphabet.iter().map(|c| format!("{CONTINUATION}{c}")));
        let mut known: BTreeSet<String> = pieces.iter().cloned().collect();

        let mut words: Vec<(Vec<String>, usize)> = counts
            .iter()
            .map(|(w, &n)| {
                let syms = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
                    .collect();
                (syms, n)
            })
            .collect();

        while pieces.len() < target_size {
            let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, n) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
                }
            }
            // max count, smallest pair on ties (BTreeMap iterates in order)
            let Some(((l, r), _)) = pairs
                .iter()
                .fold(None, |best: Option<(&(&str, &str), usize)>, (k, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((k, c)),
                })
            else {
                break;
            };
            let (l, r) = (l.to_string(), r.to_string());
            let merged = format!("{l}{}", r.trim_start_matches(CONTINUATION));
            for (syms, _) in &mut words {
                let mut i = 0;
                while i + 1 < syms.len() {
                    if syms[i] == l && syms[i + 1] == r {
                        syms[i] = merged.clone();
                        syms.remove(i + 1);
                    }
                    i += 1;
                }
            }
            if known.insert(merged.clone()) {
                pieces.push(merged);
            }
        }
        Self::from_pieces(pieces)
    }

    /// Validates a piece list: reserved symbols first, no duplicates, and
    /// every alphabet character present as initial and continuation piece.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if pieces.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::invalid(format!("vocabulary must start with reserved symbol {r} at id {i}")));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut alphabet = BTreeSet::new();
        let mut longest = 1;
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p == CONTINUATION {
                return Err(Error::invalid(format!("empty piece at id {i}")));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate piece `{p}`")));
            }
            if i >= RESERVED.len() {
                let body = p.strip_prefix(CONTINUATION).unwrap_or(p);
                longest = longest.max(body.chars().count());
                if !p.starts_with(CONTINUATION) && p.chars().count() == 1 {
                    alphabet.insert(p.chars().next().unwrap());
                }
            }
        }
        for c in &alphabet {
            if !index.contains_key(&format!("{CONTINUATION}{c}")) {
                return Err(Error::invalid(format!("alphabet character `{c}` lacks a continuation piece")));
            }
        }
        Ok(Self {
            pieces,
            index,
            alphabet,
            longest,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// Greedy longest-match-first encoding of normalized `text`. A word with
    /// any character outside the vocabulary alphabet becomes `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let norm = normalize(text);
        let mut ids = Vec::new();
        let mut buf = String::new();
        for word in norm.split(' ').filter(|w| !w.is_empty()) {
            let chars: Vec<char> = word.chars().collect();
            if chars.iter().any(|c| !self.alphabet.contains(c)) {
                ids.push(UNK_ID);
                continue;
            }
            let mut start = 0;
            while start < chars.len() {
                let mut end = (start + self.longest).min(chars.len());
                let id = loop {
                    buf.clear();
                    if start > 0 {
                        buf.push_str(CONTINUATION);
                    }
                    buf.extend(&chars[start..end]);
                    if let Some(&id) = self.index.get(&buf) {
                        break id;
                    }
                    // single characters are always present
                    end -= 1;
                };
                ids.push(id);
                start = end;
            }
        }
        ids
    }

    /// Joins pieces back into words. `[PAD]`, `[BOS]` and `[EOS]` are skipped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let p = self
                .piece(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range for vocabulary of {}", self.len())))?;
            if matches!(id, PAD_ID | BOS_ID | EOS_ID) {
                continue;
            }
            match p.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() && id != UNK_ID => out.push_str(rest),
                Some(rest) => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(rest);
                }
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(p);
                }
            }
        }
        Ok(out)
    }

    /// One piece per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pieces(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the vocabulary file contents, used to check that two
    /// checkpoints share a vocabulary.
    pub fn digest(&self) -> String {
        let d = Sha256::digest(self.to_text().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}
