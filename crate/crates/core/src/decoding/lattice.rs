use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame log-probabilities over `blank` followed by the symbols of
/// `alphabet`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLattice {
    alphabet: Vec<char>,
    frames: usize,
    logp: Vec<f64>,
}

/// Space, `a`-`z` and apostrophe.
pub fn standard_alphabet() -> Vec<char> {
    std::iter::once(' ').chain('a'..='z').chain(std::iter::once('\'')).collect()
}

impl FrameLattice {
    /// Validates that every frame row is a distribution within 1e-5.
    pub fn new(alphabet: Vec<char>, logp: Vec<f64>) -> Result<Self> {
        let c = alphabet.len() + 1;
        if alphabet.is_empty() {
            return Err(Error::invalid("lattice alphabet is empty"));
        }
        let mut seen = alphabet.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != alphabet.len() {
            return Err(Error::invalid("lattice alphabet has duplicate symbols"));
        }
        if !logp.len().is_multiple_of(c) {
            return Err(Error::invalid(format!("{} values do not form rows of {c}", logp.len())));
        }
        for (t, row) in logp.chunks(c).enumerate() {
            if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::invalid(format!("frame {t} holds invalid log-probabilities")));
            }
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::invalid(format!("frame {t} sums to {s} in probability space")));
            }
        }
        Ok(Self { frames: logp.len() / c, alphabet, logp })
    }

    /// Builds a lattice from unnormalized positive weights per frame.
    pub fn from_weights(alphabet: Vec<char>, weights: &[f64]) -> Result<Self> {
        let c = alphabet.len() + 1;
        if !weights.len().is_multiple_of(c) || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite, non-negative rows"));
        }
        let mut logp = Vec::with_capacity(weights.len());
        for row in weights.chunks(c) {
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::invalid("a frame has zero total weight"));
            }
            logp.extend(row.iter().map(|w| (w / s).ln()));
        }
        Self::new(alphabet, logp)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of columns: blank plus the alphabet.
    pub fn classes(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let c = self.classes();
        &self.logp[t * c..(t + 1) * c]
    }

    /// Column of `ch`, if it belongs to the alphabet.
    pub fn column(&self, ch: char) -> Option<usize> {
        self.alphabet.iter().position(|&a| a == ch).map(|i| i + 1)
    }

    pub fn symbol(&self, column: usize) -> Option<char> {
        column.checked_sub(1).and_then(|i| self.alphabet.get(i).copied())
    }
}
