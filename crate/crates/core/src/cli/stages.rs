//! Pipeline stages. Each reads and writes documented files under one output
//! directory and reports what it touched so the caller can stamp a manifest.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::PipelineConfig;
use crate::channel::{emit_lattice, ChannelConfig};
use crate::checkpoint::Checkpoint;
use crate::corpus;
use crate::datagen::{self, fold_channels, read_jsonl, write_jsonl, ParallelPair, Variant};
use crate::decoding::{ctc_greedy, fused_beam_search, rescore, to_jsonl, FusionConfig, NBestRecord};
use crate::error::{Error, Result};
use crate::evalkit::{
    ablation_report, wer, wer_corpus, wer_histogram, AblationReport, EvalRun, HistogramTable, WerBreakdown,
};
use crate::init::{apply_plan, InitPlan, Source};
use crate::model::pretrain::pretrain_encoder;
use crate::model::{correct_greedy_batch, CorrectorWeights, LossConfig, ModelSpec, Pair, TrainConfig, Trainer};
use crate::ngram::NgramModel;
use crate::seed;
use crate::wordpiece::Vocab;

pub const CORPUS_TRAIN: &str = "corpus.train.txt";
pub const CORPUS_HELDOUT: &str = "corpus.heldout.txt";
pub const PAIRS: &str = "pairs.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const LM: &str = "lm.arpa";
pub const DECODED_GREEDY: &str = "decoded.greedy.jsonl";
pub const DECODED_FUSION: &str = "decoded.fusion.jsonl";
pub const DECODED_RESCORE: &str = "decoded.rescore.jsonl";
pub const NBEST_FUSION: &str = "nbest.fusion.jsonl";
pub const MODELS: &str = "models";
pub const PRETRAINED: &str = "pretrained";
pub const REPORTS: &str = "reports";
pub const TRAIN_SUMMARY: &str = "train.json";

/// A hypothesis with its reference. `target`/`source` are accepted as
/// aliases, so parallel-pair files can be evaluated directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub id: String,
    #[serde(alias = "target")]
    pub reference: String,
    #[serde(alias = "source")]
    pub hypothesis: String,
    /// Corrector input, when the hypothesis is a correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_transcripts(path: &Path, items: &[Transcript]) -> Result<()> {
    let mut text = String::new();
    for t in items {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Files a stage read and wrote, plus a summary for the terminal.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

pub struct Stage<'a> {
    pub dir: &'a Path,
    pub cfg: &'a PipelineConfig,
}

pub fn parse_cell(cell: &str) -> Result<(Source, Source)> {
    let side = |s: &str| match s {
        "rand" => Ok(Source::Random),
        "pre" => Ok(Source::Pretrained),
        _ => Err(Error::config("init", format!("unknown init side {s:?} in cell {cell:?} (use rand or pre)"))),
    };
    match cell.split_once('/') {
        Some((e, d)) => Ok((side(e)?, side(d)?)),
        None => Err(Error::config("init", format!("init cell {cell:?} must look like enc/dec, e.g. pre/rand"))),
    }
}

fn variant_slug(v: Variant) -> &'static str {
    match v {
        Variant::TenFold => "tenfold",
        Variant::Cutout => "cutout",
        Variant::Dropout => "dropout",
        Variant::Both => "both",
    }
}

pub fn model_name(v: Variant, cell: &str) -> String {
    format!("{}.{}", variant_slug(v), cell.replace('/', "-"))
}

impl Stage<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn model_dir(&self, name: &str) -> PathBuf {
        self.dir.join(MODELS).join(name)
    }

    fn eval_channel(&self) -> ChannelConfig {
        ChannelConfig { seed: seed::derive(self.cfg.seed, "eval-channel"), ..self.cfg.channel.clone() }
    }

    pub fn gen_data(&self) -> Result<Outcome> {
        let cfg = self.cfg;
        let all = corpus::generate(&cfg.corpus)?;
        let (train, heldout) = all.split_at(all.len() - cfg.heldout);
        let channels = fold_channels(&cfg.channel, cfg.datagen.folds, cfg.channel.seed);
        let pairs = datagen::generate(train, &cfg.datagen, &channels)?;
        let (ct, ch, p) = (self.path(CORPUS_TRAIN), self.path(CORPUS_HELDOUT), self.path(PAIRS));
        write_lines(&ct, train)?;
        write_lines(&ch, heldout)?;
        write_jsonl(&p, &pairs)?;
        let sizes: serde_json::Map<String, Value> = Variant::ALL
            .iter()
            .map(|&v| (v.label().to_string(), json!(datagen::variant(&pairs, v, cfg.datagen.wer_max, cfg.datagen.dedup).len())))
            .collect();
        Ok(Outcome {
            inputs: vec![],
            outputs: vec![ct, ch, p],
            summary: json!({"train_sentences": train.len(), "heldout_sentences": heldout.len(), "pairs": pairs.len(), "variants": sizes}),
        })
    }

    pub fn vocab_build(&self) -> Result<Outcome> {
        let (ct, p) = (self.path(CORPUS_TRAIN), self.path(PAIRS));
        let mut lines = read_lines(&ct)?;
        lines.extend(read_jsonl(&p)?.into_iter().map(|x| x.source));
        let vocab = Vocab::build(&lines, self.cfg.vocab_size)?;
        let out = self.path(VOCAB);
        vocab.save(&out)?;
        Ok(Outcome { inputs: vec![ct, p], outputs: vec![out], summary: json!({"pieces": vocab.len()}) })
    }

    pub fn lm_fit(&self) -> Result<Outcome> {
        let ct = self.path(CORPUS_TRAIN);
        let lm = NgramModel::fit(&read_lines(&ct)?, self.cfg.lm.order, self.cfg.lm.discount)?;
        let out = self.path(LM);
        lm.save(&out)?;
        Ok(Outcome { inputs: vec![ct], outputs: vec![out], summary: json!({"order": lm.order()}) })
    }

    /// Greedy, shallow-fusion and rescored decodes of the held-out lattices.
    pub fn decode(&self) -> Result<Outcome> {
        let (ch, lm_path) = (self.path(CORPUS_HELDOUT), self.path(LM));
        let refs = read_lines(&ch)?;
        let lm = NgramModel::load(&lm_path)?;
        let channel = self.eval_channel();
        let d = &self.cfg.decode;
        let plain = FusionConfig { lambda: 0.0, width: d.rescore_width, word_bonus: 0.0 };
        let (mut greedy, mut fused, mut rescored, mut nbest) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, r) in refs.iter().enumerate() {
            let id = format!("heldout-{i:05}");
            let lattice = emit_lattice(&channel, r).map_err(|e| Error::invalid(format!("held-out sentence {i}: {e}")))?;
            let t = |h: &str| Transcript { id: id.clone(), reference: r.clone(), hypothesis: normalize_ws(h), input: None };
            greedy.push(t(&ctc_greedy(&lattice)));
            let list = fused_beam_search(&lattice, Some(&lm), &d.fusion)?;
            fused.push(t(list.best().map_or("", |h| &h.text)));
            nbest.push(NBestRecord { id: id.clone(), list });
            let list = rescore(fused_beam_search(&lattice, None, &plain)?, &lm, d.rescore_weight);
            rescored.push(t(list.best().map_or("", |h| &h.text)));
        }
        let outs = [DECODED_GREEDY, DECODED_FUSION, DECODED_RESCORE, NBEST_FUSION].map(|f| self.path(f));
        write_transcripts(&outs[0], &greedy)?;
        write_transcripts(&outs[1], &fused)?;
        write_transcripts(&outs[2], &rescored)?;
        write_file(&outs[3], to_jsonl(&nbest).as_bytes())?;
        let rate = |xs: &[Transcript]| corpus_wer(xs).rate();
        Ok(Outcome {
            inputs: vec![ch, lm_path],
            outputs: outs.to_vec(),
            summary: json!({"greedy": rate(&greedy), "fusion": rate(&fused), "rescore": rate(&rescored)}),
        })
    }

    fn load_vocab(&self) -> Result<(PathBuf, Vocab)> {
        let p = self.path(VOCAB);
        let v = Vocab::load(&p)?;
        Ok((p, v))
    }

    /// Masked-piece pretraining of an encoder on the clean training text.
    pub fn train_mlm(&self) -> Result<Outcome> {
        let ct = self.path(CORPUS_TRAIN);
        let (vp, vocab) = self.load_vocab()?;
        let sentences: Vec<Vec<u32>> = read_lines(&ct)?.iter().map(|s| vocab.encode(s)).collect();
        let spec = self.cfg.model.spec(vocab.len());
        spec.validate()?;
        let (ck, losses) = pretrain_encoder(&spec, &vocab.digest(), &sentences, &self.cfg.pretrain)?;
        let dir = self.model_dir(PRETRAINED);
        ck.save(&dir)?;
        let tail = tail_mean(&losses);
        write_file(&dir.join(TRAIN_SUMMARY), summary_json(&json!({"task": "mlm", "losses": losses}))?.as_bytes())?;
        Ok(Outcome { inputs: vec![ct, vp], outputs: vec![dir], summary: json!({"steps": losses.len(), "final_loss": tail}) })
    }

    fn encode_pairs(&self, vocab: &Vocab, pairs: &[ParallelPair], spec: &ModelSpec) -> (Vec<Pair>, usize) {
        let all: Vec<Pair> =
            pairs.iter().map(|p| Pair { src: vocab.encode(&p.source), tgt: vocab.encode(&p.target) }).collect();
        let n = all.len();
        let kept: Vec<Pair> = all.into_iter().filter(|p| p.fits(spec)).collect();
        let dropped = n - kept.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} pairs longer than max_len {}", spec.max_len);
        }
        (kept, dropped)
    }

    fn init_weights(&self, spec: &ModelSpec, vocab: &Vocab, cell: &str) -> Result<(CorrectorWeights, Vec<PathBuf>)> {
        let (enc, dec) = parse_cell(cell)?;
        let plan = InitPlan {
            encoder_source: enc,
            decoder_source: dec,
            checkpoint: None,
            std: self.cfg.init.std,
            seed: seed::derive(self.cfg.seed, "init"),
            duplicate_cross_attention: self.cfg.init.duplicate_cross_attention,
        };
        let mut inputs = Vec::new();
        let ck = if plan.needs_checkpoint() {
            let dir = self.model_dir(PRETRAINED);
            inputs.push(dir.clone());
            Some(Checkpoint::load(&dir)?)
        } else {
            None
        };
        let (w, report) = apply_plan(spec, &plan, ck.as_ref(), &vocab.digest())?;
        for f in &report.fallbacks {
            log::info!("{f} initialized randomly");
        }
        Ok((w, inputs))
    }

    /// Trains a corrector on one data variant from one init cell and saves it
    /// under `models/<name>`.
    pub fn train_corrector(&self, variant: Variant, cell: &str, name: &str) -> Result<Outcome> {
        let cfg = self.cfg;
        let p = self.path(PAIRS);
        let (vp, vocab) = self.load_vocab()?;
        let spec = cfg.model.spec(vocab.len());
        spec.validate()?;
        let selected = datagen::variant(&read_jsonl(&p)?, variant, cfg.datagen.wer_max, cfg.datagen.dedup);
        let (pairs, dropped) = self.encode_pairs(&vocab, &selected, &spec);
        let (w, mut inputs) = self.init_weights(&spec, &vocab, cell)?;
        let mut trainer = Trainer::new(spec.clone(), w, cfg.train.clone())?;
        let report = trainer.run(&pairs)?;
        let mut ck = trainer.weights.to_checkpoint(&spec);
        ck.meta.insert("vocab.digest".into(), vocab.digest());
        ck.meta.insert("init.cell".into(), cell.into());
        ck.meta.insert("data.variant".into(), variant.label().into());
        let dir = self.model_dir(name);
        ck.save(&dir)?;
        let tail = tail_mean(&report.losses);
        let summary = json!({
            "task": "correction", "variant": variant.label(), "init": cell, "pairs": pairs.len(),
            "dropped": dropped, "steps": report.losses.len(), "final_loss": tail, "losses": report.losses,
        });
        write_file(&dir.join(TRAIN_SUMMARY), summary_json(&summary)?.as_bytes())?;
        inputs.extend([p, vp]);
        Ok(Outcome {
            inputs,
            outputs: vec![dir],
            summary: json!({"model": name, "pairs": pairs.len(), "steps": report.losses.len(), "final_loss": tail}),
        })
    }

    /// Greedy correction of every hypothesis in `input`.
    pub fn correct(&self, name: &str, input: &Path, output: &Path) -> Result<Outcome> {
        let dir = self.model_dir(name);
        let ck = Checkpoint::load(&dir)?;
        let (vp, vocab) = self.load_vocab()?;
        if ck.meta.get("vocab.digest") != Some(&vocab.digest()) {
            return Err(Error::invalid(format!("model {name} was trained with a different vocabulary than {}", vp.display())));
        }
        let (spec, w) = CorrectorWeights::from_checkpoint(&ck)?;
        let items = read_transcripts(input)?;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.cfg.correct_batch) {
            let srcs: Vec<Vec<u32>> = chunk
                .iter()
                .map(|t| {
                    let mut ids = vocab.encode(&t.hypothesis);
                    ids.truncate(spec.max_len - 1);
                    ids
                })
                .collect();
            let refs: Vec<&[u32]> = srcs.iter().map(Vec::as_slice).collect();
            for (t, h) in chunk.iter().zip(correct_greedy_batch(&spec, &w, &refs, spec.max_len)?) {
                out.push(Transcript {
                    id: t.id.clone(),
                    reference: t.reference.clone(),
                    hypothesis: normalize_ws(&vocab.decode(&h.ids)?),
                    input: Some(t.hypothesis.clone()),
                });
            }
        }
        write_transcripts(output, &out)?;
        Ok(Outcome {
            inputs: vec![dir, vp, input.to_path_buf()],
            outputs: vec![output.to_path_buf()],
            summary: json!({"input": corpus_wer(&items).rate(), "corrected": corpus_wer(&out).rate()}),
        })
    }

    /// Steps a cell needs to fit a few fixed pairs below the race target,
    /// without dropout or label smoothing.
    pub fn race(&self, cell: &str) -> Result<(Option<usize>, Vec<PathBuf>)> {
        let cfg = self.cfg;
        let race = &cfg.ablate.race;
        let p = self.path(PAIRS);
        let (vp, vocab) = self.load_vocab()?;
        let mut spec = cfg.model.spec(vocab.len());
        spec.dropout = 0.0;
        let base = datagen::variant(&read_jsonl(&p)?, Variant::TenFold, cfg.datagen.wer_max, cfg.datagen.dedup);
        let (mut pairs, _) = self.encode_pairs(&vocab, &base, &spec);
        pairs.truncate(race.pairs);
        let (w, mut inputs) = self.init_weights(&spec, &vocab, cell)?;
        let tc = TrainConfig {
            optim: race.optim.clone(),
            loss: LossConfig { smoothing: 0.0, exclude_pad: true },
            batch_tokens: usize::MAX,
            seed: cfg.train.seed,
            target_loss: Some(race.target_loss),
            log_every: 0,
        };
        let report = Trainer::new(spec, w, tc)?.run(&pairs)?;
        inputs.extend([p, vp]);
        Ok((report.reached_target_at, inputs))
    }

    /// Data-variant and init-cell grids, the init race and WER histograms.
    pub fn ablate(&self) -> Result<Outcome> {
        let cfg = self.cfg;
        let ab = &cfg.ablate;
        let mut out = Outcome::default();
        let greedy_path = self.path(DECODED_GREEDY);
        let stamp = |system: String, items: &[Transcript]| EvalRun {
            system,
            dataset: "heldout".into(),
            pairs: items.iter().map(|t| (t.reference.clone(), t.hypothesis.clone())).collect(),
            config_hash: cfg.digest(),
            seed: cfg.seed,
        };
        let greedy = read_transcripts(&greedy_path)?;
        let mut t1 = vec![stamp("greedy".into(), &greedy)];
        for (label, f) in [("fusion", DECODED_FUSION), ("rescore", DECODED_RESCORE)] {
            let path = self.path(f);
            t1.push(stamp(label.into(), &read_transcripts(&path)?));
            out.inputs.push(path);
        }
        out.inputs.push(greedy_path.clone());

        let mut trained: Vec<(String, Vec<Transcript>)> = Vec::new();
        let mut run_model = |variant: Variant, cell: &str, out: &mut Outcome| -> Result<Vec<Transcript>> {
            let name = model_name(variant, cell);
            if let Some((_, t)) = trained.iter().find(|(n, _)| *n == name) {
                return Ok(t.clone());
            }
            let o = self.train_corrector(variant, cell, &name)?;
            out.inputs.extend(o.inputs.into_iter().filter(|p| !p.starts_with(self.dir.join(MODELS))));
            out.outputs.extend(o.outputs);
            let dest = self.path(&format!("corrected.{name}.jsonl"));
            self.correct(&name, &greedy_path, &dest)?;
            out.outputs.push(dest.clone());
            let t = read_transcripts(&dest)?;
            trained.push((name, t.clone()));
            Ok(t)
        };
        for &v in &ab.variants {
            let t = run_model(v, "rand/rand", &mut out)?;
            t1.push(stamp(format!("corrector {}", v.label()), &t));
        }
        let mut t2 = Vec::new();
        let mut race_rows = Vec::new();
        for cell in &ab.cells {
            let t = run_model(cfg.variant, cell, &mut out)?;
            t2.push(stamp(cell.clone(), &t));
            let (steps, _) = self.race(cell)?;
            race_rows.push((cell.clone(), steps));
        }
        let hist_train: Vec<f64> =
            datagen::variant(&read_jsonl(&self.path(PAIRS))?, cfg.variant, cfg.datagen.wer_max, cfg.datagen.dedup)
                .iter()
                .map(|p| p.wer)
                .collect();
        let hist_heldout: Vec<f64> = greedy.iter().map(|t| wer(&t.reference, &t.hypothesis).rate().unwrap_or(1.0)).collect();
        let bin = ab.histogram_bin;
        let hist = HistogramTable::new(
            bin,
            vec![
                (format!("train {}", cfg.variant.label()), wer_histogram(&hist_train, bin)?),
                ("heldout greedy".into(), wer_histogram(&hist_heldout, bin)?),
            ],
        )?;

        let reports = self.dir.join(REPORTS);
        let table1 = ablation_report("Data augmentation ablation (held-out WER %)", &t1)?;
        let table2 = ablation_report("Initialization schemes (held-out WER %)", &t2)?;
        let mut race_csv = String::from("cell,steps_to_target,target_loss\n");
        for (c, s) in &race_rows {
            race_csv.push_str(&format!("{c},{},{}\n", s.map_or("-".into(), |s| s.to_string()), ab.race.target_loss));
        }
        let files: Vec<(&str, String)> = vec![
            ("table1.csv", table1.to_csv()),
            ("table1.txt", table1.to_text()),
            ("table2.csv", table2.to_csv()),
            ("table2.txt", table2.to_text()),
            ("init_race.csv", race_csv),
            ("histogram.csv", hist.to_csv()),
            ("histogram.txt", hist.to_text()),
        ];
        for (f, body) in &files {
            let path = reports.join(f);
            write_file(&path, body.as_bytes())?;
            out.outputs.push(path);
        }
        out.inputs.push(self.path(PAIRS));
        out.inputs.sort();
        out.inputs.dedup();
        out.summary = json!({
            "table1": report_json(&table1),
            "table2": report_json(&table2),
            "init_race": race_rows.iter().map(|(c, s)| json!({"cell": c, "steps": s})).collect::<Vec<_>>(),
        });
        Ok(out)
    }
}

fn report_json(r: &AblationReport) -> Value {
    json!(r.rows.iter().map(|row| json!({"system": row.system, "wer": row.wer})).collect::<Vec<_>>())
}

pub fn corpus_wer(items: &[Transcript]) -> WerBreakdown {
    wer_corpus(items.iter().map(|t| (t.reference.as_str(), t.hypothesis.as_str())))
}

fn tail_mean(losses: &[f64]) -> Option<f64> {
    let tail = &losses[losses.len().saturating_sub(50)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

fn summary_json(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}
