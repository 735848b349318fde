use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::wer::wer_corpus;
use crate::error::{Error, Result};

/// One evaluated system on one dataset, with the manifest stamp of the run
/// that produced its hypotheses.
#[derive(Clone, Debug)]
pub struct EvalRun {
    pub system: String,
    pub dataset: String,
    /// `(reference, hypothesis)` pairs.
    pub pairs: Vec<(String, String)>,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub dataset: String,
    /// Corpus WER x 100, rounded to two decimals.
    pub wer: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

pub fn format_percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}

pub fn ablation_report(title: &str, runs: &[EvalRun]) -> Result<AblationReport> {
    if runs.is_empty() {
        return Err(Error::invalid("ablation report needs at least one run"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if !seen.insert((run.system.as_str(), run.dataset.as_str())) {
            return Err(Error::invalid(format!(
                "duplicate report cell ({}, {})",
                run.system, run.dataset
            )));
        }
        let b = wer_corpus(run.pairs.iter().map(|(r, h)| (r.as_str(), h.as_str())));
        let rate = b.rate().ok_or_else(|| {
            Error::invalid(format!("run ({}, {}) has an undefined WER", run.system, run.dataset))
        })?;
        rows.push(ReportRow {
            system: run.system.clone(),
            dataset: run.dataset.clone(),
            wer: format_percent(rate),
            config_hash: run.config_hash.clone(),
            seed: run.seed,
        });
    }
    Ok(AblationReport {
        title: title.to_string(),
        rows,
    })
}

const HEADER: &str = "system,dataset,wer,config_hash,seed";

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.system, r.dataset, r.wer, r.config_hash, r.seed).unwrap();
        }
        s
    }

    pub fn from_csv(title: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(Error::parse("report csv", 1, "missing header")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::parse("report csv", i + 1, "expected 5 fields"));
            }
            let seed = f[4]
                .parse()
                .map_err(|_| Error::parse("report csv", i + 1, "bad seed"))?;
            rows.push(ReportRow {
                system: f[0].to_string(),
                dataset: f[1].to_string(),
                wer: f[2].to_string(),
                config_hash: f[3].to_string(),
                seed,
            });
        }
        Ok(Self {
            title: title.to_string(),
            rows,
        })
    }

    /// Aligned table with systems as rows and datasets as columns.
    pub fn to_text(&self) -> String {
        let mut systems: Vec<&str> = Vec::new();
        let mut datasets: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !systems.contains(&r.system.as_str()) {
                systems.push(&r.system);
            }
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        let w0 = systems.iter().map(|s| s.len()).max().unwrap_or(0).max(6);
        let widths: Vec<usize> = datasets.iter().map(|d| d.len().max(6)).collect();
        let mut s = format!("{}\n", self.title);
        write!(s, "{:<w0$}", "system").unwrap();
        for (d, w) in datasets.iter().zip(&widths) {
            write!(s, "  {:>w$}", d, w = *w).unwrap();
        }
        s.push('\n');
        for sys in &systems {
            write!(s, "{:<w0$}", sys).unwrap();
            for (d, w) in datasets.iter().zip(&widths) {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.system == *sys && r.dataset == *d)
                    .map_or("-", |r| r.wer.as_str());
                write!(s, "  {:>w$}", cell, w = *w).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(system: &str, dataset: &str, pairs: &[(&str, &str)]) -> EvalRun {
        EvalRun {
            system: system.into(),
            dataset: dataset.into(),
            pairs: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            config_hash: "abc123".into(),
            seed: 7,
        }
    }

    #[test]
    fn one_sixth_formats_to_two_decimals() {
        let r = ablation_report("t", &[run("greedy", "test", &[("a b c", "a b c"), ("d e f", "d x f")])]).unwrap();
        assert_eq!(r.rows[0].wer, "16.67");
    }

    #[test]
    fn empty_and_duplicate_runs_fail() {
        assert!(ablation_report("t", &[]).is_err());
        let a = run("s", "d", &[("a", "a")]);
        assert!(ablation_report("t", &[a.clone(), a]).is_err());
    }

    #[test]
    fn csv_round_trip_and_text_agree() {
        let r = ablation_report(
            "t",
            &[
                run("greedy", "test", &[("a b c", "a x c")]),
                run("corrected", "test", &[("a b c", "a b c")]),
            ],
        )
        .unwrap();
        let back = AblationReport::from_csv("t", &r.to_csv()).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.contains("33.33") && text.contains("0.00"));
    }
}
