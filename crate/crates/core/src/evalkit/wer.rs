use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Edit counts of one optimal word alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `(S + I + D) / N_ref`. `None` when the reference is empty but the
    /// hypothesis is not, where the rate is undefined.
    pub fn rate(&self) -> Option<f64> {
        match (self.ref_words, self.edits()) {
            (0, 0) => Some(0.0),
            (0, _) => None,
            (n, e) => Some(e as f64 / n as f64),
        }
    }
}

impl Add for WerBreakdown {
    type Output = WerBreakdown;
    fn add(self, o: Self) -> Self {
        WerBreakdown {
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            ref_words: self.ref_words + o.ref_words,
        }
    }
}

impl AddAssign for WerBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// One step of a word alignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum AlignOp {
    Match { word: String },
    Sub { reference: String, hypothesis: String },
    Del { reference: String },
    Ins { hypothesis: String },
}

pub fn wer(reference: &str, hypothesis: &str) -> WerBreakdown {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    wer_words(&r, &h)
}

pub fn wer_words<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> WerBreakdown {
    let mut out = WerBreakdown {
        ref_words: reference.len(),
        ..Default::default()
    };
    for op in align_words(reference, hypothesis) {
        match op {
            AlignOp::Match { .. } => {}
            AlignOp::Sub { .. } => out.substitutions += 1,
            AlignOp::Del { .. } => out.deletions += 1,
            AlignOp::Ins { .. } => out.insertions += 1,
        }
    }
    out
}

pub fn align(reference: &str, hypothesis: &str) -> Vec<AlignOp> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    align_words(&r, &h)
}

/// Minimum-edit word alignment with unit costs.
///
/// Among alignments with the fewest edits, the one with the fewest
/// insertions plus deletions is chosen, which makes the (S, I, D) triple
/// unique and swapping the arguments exchanges I and D exactly. The
/// backtrace prefers substitution, then deletion, then insertion.
pub fn align_words<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Vec<AlignOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    // cost[i][j] = (edits, indels) aligning reference[..i] with hypothesis[..j]
    let w = m + 1;
    let mut cost = vec![(0u32, 0u32); (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = (i as u32, i as u32);
    }
    for j in 0..=m {
        cost[j] = (j as u32, j as u32);
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let (de, di) = cost[(i - 1) * w + (j - 1)];
            let diag = if same { (de, di) } else { (de + 1, di) };
            let (ue, ui) = cost[(i - 1) * w + j];
            let (le, li) = cost[i * w + (j - 1)];
            cost[i * w + j] = diag.min((ue + 1, ui + 1)).min((le + 1, li + 1));
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let r = reference[i - 1].as_ref();
            let h = hypothesis[j - 1].as_ref();
            let (de, di) = cost[(i - 1) * w + (j - 1)];
            if r == h && here == (de, di) {
                ops.push(AlignOp::Match { word: r.to_string() });
                i -= 1;
                j -= 1;
                continue;
            }
            if r != h && here == (de + 1, di) {
                ops.push(AlignOp::Sub {
                    reference: r.to_string(),
                    hypothesis: h.to_string(),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let (ue, ui) = cost[(i - 1) * w + j];
            if here == (ue + 1, ui + 1) {
                ops.push(AlignOp::Del {
                    reference: reference[i - 1].as_ref().to_string(),
                });
                i -= 1;
                continue;
            }
        }
        ops.push(AlignOp::Ins {
            hypothesis: hypothesis[j - 1].as_ref().to_string(),
        });
        j -= 1;
    }
    ops.reverse();
    ops
}

/// Corpus WER: edit and reference counts are summed before dividing.
pub fn wer_corpus<'a, I>(pairs: I) -> WerBreakdown
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    pairs
        .into_iter()
        .map(|(r, h)| wer(r, h))
        .fold(WerBreakdown::default(), |a, b| a + b)
}
