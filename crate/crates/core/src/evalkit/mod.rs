//! Word error rate, corpus aggregation, WER histograms and ablation reports.

mod histogram;
mod report;
mod wer;

pub use histogram::{wer_histogram, Histogram, HistogramTable};
pub use report::{ablation_report, format_percent, AblationReport, EvalRun, ReportRow};
pub use wer::{align, align_words, wer, wer_corpus, wer_words, AlignOp, WerBreakdown};
