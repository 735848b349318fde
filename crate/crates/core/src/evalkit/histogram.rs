use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Sentence counts per WER bin `[k*w, (k+1)*w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Bins per-sentence WERs. Values within 1e-9 of a bin edge are counted in the
/// upper bin so that exact multiples of the width land where arithmetic says.
pub fn wer_histogram(wers: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let mut counts = vec![0usize; 1];
    for &w in wers {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("WER value {w} cannot be binned")));
        }
        let k = (w / bin_width + 1e-9).floor() as usize;
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

/// Several named histograms over a common bin grid, one column per series.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramTable {
    pub bin_width: f64,
    pub series: Vec<(String, Vec<usize>)>,
}

impl HistogramTable {
    pub fn new(bin_width: f64, series: Vec<(String, Histogram)>) -> Result<Self> {
        let bins = series.iter().map(|(_, h)| h.counts.len()).max().unwrap_or(0);
        let mut out = Vec::with_capacity(series.len());
        for (name, h) in series {
            if (h.bin_width - bin_width).abs() > 1e-12 {
                return Err(Error::invalid(format!("series `{name}` uses a different bin width")));
            }
            let mut c = h.counts;
            c.resize(bins, 0);
            out.push((name, c));
        }
        Ok(Self {
            bin_width,
            series: out,
        })
    }

    fn bins(&self) -> usize {
        self.series.first().map_or(0, |s| s.1.len())
    }

    /// `bin_start,bin_end,<series...>` with edges to four decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end");
        for (name, _) in &self.series {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.bins() {
            let lo = k as f64 * self.bin_width;
            write!(s, "{:.4},{:.4}", lo, lo + self.bin_width).unwrap();
            for (_, c) in &self.series {
                write!(s, ",{}", c[k]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<15}", "wer bin");
        for (name, _) in &self.series {
            write!(s, " {:>10}", name).unwrap();
        }
        s.push('\n');
        for k in 0..self.bins() {
            let lo = k as f64 * self.bin_width;
            write!(s, "{:<15}", format!("[{:.2}, {:.2})", lo, lo + self.bin_width)).unwrap();
            for (_, c) in &self.series {
                write!(s, " {:>10}", c[k]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_is_one_bin() {
        let h = wer_histogram(&[0.0; 7], 0.1).unwrap();
        assert_eq!(h.counts, vec![7]);
    }

    #[test]
    fn hand_binning() {
        // [0, .25): 0 and 0.2; [.25, .5): 0.25; [.5, .75): 0.6
        let h = wer_histogram(&[0.0, 0.2, 0.25, 0.6], 0.25).unwrap();
        assert_eq!(h.counts, vec![2, 1, 1]);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn exact_multiples_go_up() {
        let h = wer_histogram(&[0.3], 0.1).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 1]);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(wer_histogram(&[0.1], 0.0).is_err());
        assert!(wer_histogram(&[0.1], -1.0).is_err());
    }

    #[test]
    fn table_pads_series() {
        let a = wer_histogram(&[0.0, 0.6], 0.25).unwrap();
        let b = wer_histogram(&[0.1], 0.25).unwrap();
        let t = HistogramTable::new(0.25, vec![("train".into(), a), ("test".into(), b)]).unwrap();
        let csv = t.to_csv();
        assert_eq!(
            csv,
            "bin_start,bin_end,train,test\n0.0000,0.2500,1,1\n0.2500,0.5000,0,0\n0.5000,0.7500,1,0\n"
        );
    }
}
