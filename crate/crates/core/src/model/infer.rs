use serde::{Deserialize, Serialize};

use super::forward::{decode, encode, Bound, DropSites, Mode, SeqBatch};
use super::spec::{CorrectorWeights, ModelSpec};
use crate::error::{Error, Result};
use crate::numkit::{Real, Tape, Var};
use crate::wordpiece::{BOS_ID, EOS_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "width")]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

/// A decoded target sequence without BOS/EOS markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    /// Sum of model log-probabilities of the emitted tokens, EOS included.
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Number of scored tokens: the ids plus EOS when emitted.
    pub fn scored_len(&self) -> usize {
        (self.ids.len() + usize::from(self.finished)).max(1)
    }

    pub fn score(&self) -> f64 {
        self.logprob / self.scored_len() as f64
    }
}

fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let m = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x.f64() - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x.f64() - lse).collect()
}

/// Lowest id wins on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Generation length cap: the decoder input holds BOS plus the generated ids.
fn step_cap(spec: &ModelSpec, max_len: usize) -> usize {
    max_len.min(spec.max_len - 1)
}

struct Session<'a, T: Real> {
    tape: Tape<T>,
    p: Bound,
    spec: &'a ModelSpec,
    src: SeqBatch,
    memory: Var,
    mark: usize,
}

impl<'a, T: Real> Session<'a, T> {
    /// `srcs` are piece ids without markers; EOS is appended as in training.
    fn new(spec: &'a ModelSpec, w: &CorrectorWeights<T>, srcs: &[&[u32]]) -> Result<Self> {
        let marked: Vec<Vec<u32>> = srcs.iter().map(|s| s.iter().copied().chain([EOS_ID]).collect()).collect();
        let src = SeqBatch::new(&marked.iter().map(Vec::as_slice).collect::<Vec<_>>(), spec)?;
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, w);
        let mut drops = DropSites::new(0.0, Mode::Eval, 0);
        let memory = encode(&mut tape, &p, spec, &src, &mut drops)?;
        let mark = tape.len();
        Ok(Self { tape, p, spec, src, memory, mark })
    }

    /// Last-position log-probabilities for each prefix; `rows[i]` selects the
    /// source sentence of prefix `i`.
    fn next_logprobs(&mut self, prefixes: &[&[u32]], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.tape.truncate(self.mark);
        let s = self.src.len;
        let mut mem_rows = Vec::with_capacity(rows.len() * s);
        for &r in rows {
            mem_rows.extend(r * s..(r + 1) * s);
        }
        let memory = self.tape.gather(self.memory, &mem_rows)?;
        let src = SeqBatch {
            ids: Vec::new(),
            lens: rows.iter().map(|&r| self.src.lens[r]).collect(),
            batch: rows.len(),
            len: s,
        };
        let tgt = SeqBatch::new(prefixes, self.spec)?;
        let mut drops = DropSites::new(0.0, Mode::Eval, 0);
        let logits = decode(&mut self.tape, &self.p, self.spec, memory, &src, &tgt, &mut drops)?;
        let z = self.tape.value(logits);
        Ok(prefixes
            .iter()
            .enumerate()
            .map(|(i, pfx)| log_softmax(z.row(i * tgt.len + pfx.len() - 1)))
            .collect())
    }
}

/// Greedy decoding of many sources at once; identical to running each alone.
pub fn correct_greedy_batch<T: Real>(
    spec: &ModelSpec,
    w: &CorrectorWeights<T>,
    srcs: &[&[u32]],
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let cap = step_cap(spec, max_len);
    let mut sess = Session::new(spec, w, srcs)?;
    let mut prefixes: Vec<Vec<u32>> = vec![vec![BOS_ID]; srcs.len()];
    let mut hyps: Vec<Hypothesis> = (0..srcs.len())
        .map(|_| Hypothesis { ids: Vec::new(), logprob: 0.0, finished: false })
        .collect();
    for _ in 0..cap {
        let active: Vec<usize> = (0..srcs.len()).filter(|&i| !hyps[i].finished).collect();
        if active.is_empty() {
            break;
        }
        let pfx: Vec<&[u32]> = active.iter().map(|&i| prefixes[i].as_slice()).collect();
        let lps = sess.next_logprobs(&pfx, &active)?;
        for (&i, lp) in active.iter().zip(&lps) {
            let tok = argmax(lp);
            hyps[i].logprob += lp[tok];
            if tok as u32 == EOS_ID {
                hyps[i].finished = true;
            } else {
                hyps[i].ids.push(tok as u32);
                prefixes[i].push(tok as u32);
            }
        }
    }
    Ok(hyps)
}

fn beam_search<T: Real>(
    spec: &ModelSpec,
    w: &CorrectorWeights<T>,
    src: &[u32],
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    let cap = step_cap(spec, max_len);
    let mut sess = Session::new(spec, w, &[src])?;
    let mut beams = vec![Hypothesis { ids: Vec::new(), logprob: 0.0, finished: false }];
    for _ in 0..cap {
        let active: Vec<&Hypothesis> = beams.iter().filter(|h| !h.finished).collect();
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<u32>> = active
            .iter()
            .map(|h| std::iter::once(BOS_ID).chain(h.ids.iter().copied()).collect())
            .collect();
        let pfx: Vec<&[u32]> = prefixes.iter().map(|p| p.as_slice()).collect();
        let lps = sess.next_logprobs(&pfx, &vec![0; pfx.len()])?;
        let mut pool: Vec<Hypothesis> = beams.iter().filter(|h| h.finished).cloned().collect();
        for (h, lp) in active.iter().zip(&lps) {
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut next = (*h).clone();
                next.logprob += lp[tok];
                if tok as u32 == EOS_ID {
                    next.finished = true;
                } else {
                    next.ids.push(tok as u32);
                }
                pool.push(next);
            }
        }
        sort_hyps(&mut pool);
        pool.truncate(width);
        beams = pool;
    }
    Ok(beams)
}

/// Best first by length-normalized log-probability, then by ids.
fn sort_hyps(h: &mut [Hypothesis]) {
    h.sort_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.ids.cmp(&b.ids)));
}

/// Corrects one source. Greedy returns a single hypothesis; beam returns up
/// to `width` hypotheses, best first by length-normalized log-probability.
/// The greedy path is kept in the beam pool, so the beam's top score is never
/// below the greedy score.
pub fn correct<T: Real>(
    spec: &ModelSpec,
    w: &CorrectorWeights<T>,
    src_ids: &[u32],
    strategy: Strategy,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    let greedy = correct_greedy_batch(spec, w, &[src_ids], max_len)?;
    match strategy {
        Strategy::Greedy => Ok(greedy),
        Strategy::Beam(0) => Err(Error::invalid("beam width must be at least 1")),
        Strategy::Beam(width) => {
            let mut pool = beam_search(spec, w, src_ids, width, max_len)?;
            for g in greedy {
                if !pool.iter().any(|h| h.ids == g.ids && h.finished == g.finished) {
                    pool.push(g);
                }
            }
            sort_hyps(&mut pool);
            pool.truncate(width);
            Ok(pool)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0f32, 2.0, 3.0]);
        let s: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
    }

    #[test]
    fn score_counts_eos() {
        let h = Hypothesis { ids: vec![4, 5], logprob: -3.0, finished: true };
        assert_eq!(h.score(), -1.0);
    }
}
