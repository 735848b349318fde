//! wasm-bindgen bindings for the static demo page in `www/`. Every export
//! takes plain strings and numbers and returns a JSON string, so the page
//! needs no generated type glue beyond `JSON.parse`.

use std::cell::OnceCell;

use recorrect::channel::{corrupt, emit_lattice, ChannelConfig};
use recorrect::corpus::{self, CorpusConfig};
use recorrect::decoding::{ctc_greedy, fused_beam_search, FusionConfig};
use recorrect::evalkit::{align, format_percent, wer, wer_corpus, wer_histogram};
use recorrect::ngram::NgramModel;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const LM_SENTENCES: usize = 2000;

thread_local! {
    static LM: OnceCell<NgramModel> = const { OnceCell::new() };
}

fn with_lm<R>(f: impl FnOnce(&NgramModel) -> R) -> R {
    LM.with(|cell| {
        let lm = cell.get_or_init(|| {
            let text = corpus::generate(&CorpusConfig { sentences: LM_SENTENCES, seed: 1, ..CorpusConfig::default() })
                .expect("default corpus config is valid");
            NgramModel::fit(&text, 3, 0.1).expect("corpus is non-empty")
        });
        f(lm)
    })
}

fn to_js(r: recorrect::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

fn channel(strength: f64, seed: u64) -> ChannelConfig {
    ChannelConfig { dropout_strength: strength, seed, ..ChannelConfig::default() }
}

fn rate(reference: &str, hypothesis: &str) -> Value {
    json!(wer(reference, hypothesis).rate())
}

/// One sample sentence from the demo grammar.
#[wasm_bindgen]
pub fn sample_sentence(seed: u64) -> Result<String, JsError> {
    let s = corpus::generate(&CorpusConfig { sentences: 1, seed, ..CorpusConfig::default() })
        .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(s.into_iter().next().unwrap_or_default())
}

/// Corrupts `text` with the default confusion table scaled by `strength`
/// and returns `{noisy, wer, alignment}`.
#[wasm_bindgen]
pub fn corrupt_text(text: &str, strength: f64, seed: u64) -> Result<String, JsError> {
    to_js((|| {
        let cfg = channel(strength, seed);
        cfg.validate()?;
        let noisy = corrupt(&cfg, text)?;
        let noisy = noisy.split_whitespace().collect::<Vec<_>>().join(" ");
        Ok(json!({"noisy": noisy, "wer": rate(text, &noisy), "alignment": align(text, &noisy)}))
    })())
}

/// Emits a frame lattice for `text` and decodes it greedily and with
/// shallow fusion of a trigram model of the demo grammar at weight `lambda`.
#[wasm_bindgen]
pub fn decode_text(text: &str, strength: f64, seed: u64, lambda: f64, width: usize) -> Result<String, JsError> {
    to_js((|| {
        let cfg = channel(strength, seed);
        cfg.validate()?;
        let lattice = emit_lattice(&cfg, text)?;
        let greedy = ctc_greedy(&lattice).split_whitespace().collect::<Vec<_>>().join(" ");
        let fusion = FusionConfig { lambda, width, ..FusionConfig::default() };
        let list = with_lm(|lm| fused_beam_search(&lattice, Some(lm), &fusion))?;
        let best = list.best().map(|h| h.text.split_whitespace().collect::<Vec<_>>().join(" ")).unwrap_or_default();
        Ok(json!({
            "frames": lattice.frames(),
            "greedy": {"text": greedy, "wer": rate(text, &greedy)},
            "fused": {"text": best, "wer": rate(text, &best)},
            "nbest": list.hyps.iter().take(5).collect::<Vec<_>>(),
        }))
    })())
}

/// Corpus WER and per-sentence histogram of tab-separated
/// `reference<TAB>hypothesis` lines.
#[wasm_bindgen]
pub fn wer_report(tsv: &str, bin_width: f64) -> Result<String, JsError> {
    to_js((|| {
        let mut pairs = Vec::new();
        for (i, line) in tsv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (r, h) = line
                .split_once('\t')
                .ok_or_else(|| recorrect::Error::parse("input", i + 1, "expected reference<TAB>hypothesis"))?;
            pairs.push((r, h));
        }
        let total = wer_corpus(pairs.iter().copied());
        let rates: Vec<f64> = pairs.iter().map(|(r, h)| wer(r, h).rate().unwrap_or(1.0)).collect();
        let hist = wer_histogram(&rates, bin_width)?;
        Ok(json!({
            "sentences": pairs.len(),
            "wer": total.rate().map(format_percent),
            "breakdown": total,
            "bins": hist.counts,
            "bin_width": bin_width,
        }))
    })())
}
