//! ARPA text format: `\data\` header with per-order counts, then one block
//! per order of `log10 prob <TAB> words <TAB> log10 backoff` lines. Impossible
//! events are written as -99 and read back as impossible.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Entry, Interner, NgramModel, BOS, EOS, UNK};
use crate::error::{Error, Result};

const FLOOR: f64 = -99.0;

fn to_log10(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        FLOOR
    } else {
        x / std::f64::consts::LN_10
    }
}

fn from_log10(x: f64) -> f64 {
    if x <= FLOOR {
        f64::NEG_INFINITY
    } else {
        x * std::f64::consts::LN_10
    }
}

impl NgramModel {
    pub fn to_arpa(&self) -> String {
        let mut out = String::new();
        if let Some(d) = self.discount {
            let _ = writeln!(out, "# absolute discount {d}");
        }
        out.push_str("\n\\data\\\n");
        for (k, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, t.len());
        }
        for (k, t) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            let mut rows: Vec<(Vec<&str>, &Entry)> = t
                .iter()
                .map(|(g, e)| (g.iter().map(|&i| self.words[i as usize].as_str()).collect(), e))
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in rows {
                let _ = write!(out, "{}\t{}", to_log10(e.logp), words.join(" "));
                if k + 1 < self.order {
                    let _ = write!(out, "\t{}", to_log10(e.bow));
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let what = "ARPA file";
        let mut discount = None;
        let mut declared: Vec<usize> = Vec::new();
        let mut vocab = Interner::new();
        let mut tables: Vec<HashMap<Vec<u32>, Entry>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut in_data = false;
        let mut ended = false;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# absolute discount ") {
                discount = Some(rest.parse().map_err(|_| Error::parse(what, n, "bad discount"))?);
                continue;
            }
            if line == "\\data\\" {
                in_data = true;
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (k, c) = rest.split_once('=').ok_or_else(|| Error::parse(what, n, "bad count line"))?;
                let k: usize = k.trim().parse().map_err(|_| Error::parse(what, n, "bad order"))?;
                let c: usize = c.trim().parse().map_err(|_| Error::parse(what, n, "bad count"))?;
                if k != declared.len() + 1 {
                    return Err(Error::parse(what, n, "orders must be listed in sequence"));
                }
                declared.push(c);
                tables.push(HashMap::new());
                continue;
            }
            if let Some(k) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                let k: usize = k.parse().map_err(|_| Error::parse(what, n, "bad section"))?;
                if k == 0 || k > declared.len() {
                    return Err(Error::parse(what, n, "section for undeclared order"));
                }
                section = Some(k - 1);
                continue;
            }
            let k = match (in_data, section) {
                (true, Some(k)) => k,
                _ => continue,
            };
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() < 2 || f.len() > 3 {
                return Err(Error::parse(what, n, "expected prob, n-gram and optional backoff"));
            }
            let logp: f64 = f[0].trim().parse().map_err(|_| Error::parse(what, n, "bad probability"))?;
            let bow: f64 = match f.get(2) {
                Some(b) => b.trim().parse().map_err(|_| Error::parse(what, n, "bad backoff"))?,
                None => 0.0,
            };
            let gram: Vec<u32> = f[1].split(' ').map(|w| vocab.intern(w)).collect();
            if gram.len() != k + 1 {
                return Err(Error::parse(what, n, format!("expected {} words", k + 1)));
            }
            tables[k].insert(gram, Entry { logp: from_log10(logp), bow: from_log10(bow) });
        }
        if !ended {
            return Err(Error::parse(what, text.lines().count(), "missing \\end\\"));
        }
        if tables.is_empty() {
            return Err(Error::parse(what, 1, "no n-gram orders declared"));
        }
        for (k, t) in tables.iter().enumerate() {
            if t.len() != declared[k] {
                return Err(Error::parse(
                    what,
                    0,
                    format!("order {} declares {} entries but lists {}", k + 1, declared[k], t.len()),
                ));
            }
        }
        for w in [BOS, EOS, UNK] {
            if !tables[0].contains_key(&vec![vocab.ids[w]]) {
                return Err(Error::parse(what, 0, format!("unigram block lacks {w}")));
            }
        }
        Ok(Self {
            order: tables.len(),
            discount,
            words: vocab.words,
            ids: vocab.ids,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_arpa()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_arpa(&text)
    }
}
