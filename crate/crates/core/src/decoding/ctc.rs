use super::lattice::FrameLattice;
use crate::error::{Error, Result};

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Best-path decoding: per-frame argmax (lowest column on ties), repeated
/// symbols collapsed, blanks removed.
pub fn ctc_greedy(lattice: &FrameLattice) -> String {
    let mut out = String::new();
    let mut prev = 0usize;
    for t in 0..lattice.frames() {
        let row = lattice.frame(t);
        let mut best = 0;
        for (c, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = c;
            }
        }
        if best != 0 && best != prev {
            out.push(lattice.symbol(best).expect("column within alphabet"));
        }
        prev = best;
    }
    out
}

/// Natural-log probability of `text` summed over all CTC alignments.
pub fn ctc_logprob(lattice: &FrameLattice, text: &str) -> Result<f64> {
    let labels: Vec<usize> = text
        .chars()
        .map(|ch| lattice.column(ch).ok_or_else(|| Error::invalid(format!("symbol {ch:?} is not in the lattice alphabet"))))
        .collect::<Result<_>>()?;
    let t_len = lattice.frames();
    if t_len == 0 {
        return Ok(if labels.is_empty() { 0.0 } else { f64::NEG_INFINITY });
    }
    // extended sequence: blank, l1, blank, l2, ..., blank
    let mut ext = vec![0usize];
    for &l in &labels {
        ext.push(l);
        ext.push(0);
    }
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; s_len];
    let row = lattice.frame(0);
    alpha[0] = row[0];
    if s_len > 1 {
        alpha[1] = row[ext[1]];
    }
    for t in 1..t_len {
        let row = lattice.frame(t);
        let mut next = vec![f64::NEG_INFINITY; s_len];
        for s in 0..s_len {
            let mut a = alpha[s];
            if s >= 1 {
                a = log_add(a, alpha[s - 1]);
            }
            if s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2] {
                a = log_add(a, alpha[s - 2]);
            }
            next[s] = a + row[ext[s]];
        }
        alpha = next;
    }
    let end = if s_len > 1 { log_add(alpha[s_len - 1], alpha[s_len - 2]) } else { alpha[0] };
    Ok(end)
}
