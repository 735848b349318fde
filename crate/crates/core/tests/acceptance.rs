//! Acceptance suite. Runs every criterion in order and prints one
//! `criterion N: PASS|FAIL (...)` line each. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 4`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recorrect::channel::ChannelConfig;
use recorrect::cli::config::{PipelineConfig, Scale};
use recorrect::cli::stages::{self, read_transcripts, Stage, CORPUS_HELDOUT, CORPUS_TRAIN, DECODED_GREEDY};
use recorrect::corpus::{self, CorpusConfig};
use recorrect::datagen::{self, filter_dedup, fold_channels, DataGenConfig, ParallelPair, Tag, Variant};
use recorrect::decoding::{fused_beam_search, FusionConfig};
use recorrect::evalkit::{wer, wer_words};
use recorrect::init::transfer_decoder;
use recorrect::model::{LossConfig, ModelSpec, Pair, TrainConfig, Trainer};
use recorrect::ngram::{NgramModel, BOS, EOS};
use recorrect::optim::OptimizerConfig;

type Check = Result<String, String>;

/// Criterion number, time budget in seconds, check.
type Criterion = (u32, u64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Check {
    let spec = ModelSpec::new(1, 8, 2, 16);
    let worst = (0..3).map(|s| common::corrector_gradcheck(&spec, s)).fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn decoding_oracle() -> Check {
    let lm = NgramModel::fit(&["a b", "ab a", "b", "a a b", "ba", "c a"], 2, 0.3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabets: [&[char]; 4] = [&['a', 'b', ' '], &['a', 'b', 'c'], &['a', ' '], &['b']];
    let mut hits = 0;
    for i in 0..100 {
        let alpha = alphabets[i % 4];
        let frames = rng.random_range(1..=4);
        let lat = common::random_lattice(&mut rng, alpha, frames);
        let lambda = [0.0, 0.5, 2.0][i % 3];
        let nb = fused_beam_search(&lat, Some(&lm), &FusionConfig { lambda, width: 256, word_bonus: 0.0 })
            .map_err(|e| e.to_string())?;
        let (text, _) = common::brute_force_decode(&lat, &lm, lambda);
        hits += usize::from(nb.hyps[0].text == text);
    }
    ensure(hits == 100, || format!("{hits}/100 exact"))?;
    Ok("100/100 exact".into())
}

fn wer_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut hits = 0;
    for _ in 0..500 {
        let (r, h) = (common::random_words(&mut rng, 5), common::random_words(&mut rng, 5));
        let b = wer_words(&r, &h);
        let (best, optimal) = common::exhaustive_wer(&r, &h);
        hits += usize::from(b.edits() == best && optimal.contains(&(b.substitutions, b.deletions, b.insertions)));
    }
    ensure(hits == 500, || format!("{hits}/500 exact"))?;
    Ok("500/500 exact".into())
}

fn ngram_hand_checks() -> Check {
    let p = |m: &NgramModel, ctx: &[&str], w: &str| m.cond_logprob(ctx, w).exp();
    let m = NgramModel::fit(&["a b"], 2, 0.0).map_err(|e| e.to_string())?;
    ensure(p(&m, &[BOS], "a") == 1.0 && p(&m, &["a"], "b") == 1.0 && p(&m, &["b"], EOS) == 1.0, || {
        "[\"a b\"] conditionals are not all 1".into()
    })?;
    let m = NgramModel::fit(&["a a", "a b"], 2, 0.0).map_err(|e| e.to_string())?;
    let (aa, ab, ae) = (p(&m, &["a"], "a"), p(&m, &["a"], "b"), p(&m, &["a"], EOS));
    let third = 1.0 / 3.0;
    ensure([aa, ab, ae].iter().all(|x| (x - third).abs() < 1e-15) && aa / (aa + ab) == 0.5, || {
        format!("[\"a a\",\"a b\"]: P(a|a)={aa} P(b|a)={ab} P(</s>|a)={ae}")
    })?;
    ensure(m.logprob("a c") == f64::NEG_INFINITY, || "unseen word has mass at d=0".into())?;

    let words = ["the", "cat", "sat", "on", "mat"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corpus: Vec<String> = (0..40)
        .map(|_| (0..rng.random_range(1..6)).map(|_| words[rng.random_range(0..5)]).collect::<Vec<_>>().join(" "))
        .collect();
    let mut worst: f64 = 0.0;
    for (order, d) in [(2, 0.0), (3, 0.1), (4, 0.5)] {
        let m = NgramModel::fit(&corpus, order, d).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let mut ctx = vec![BOS];
            ctx.extend((0..rng.random_range(0..4)).map(|_| if rng.random_bool(0.1) { "dog" } else { words[rng.random_range(0..5)] }));
            let s: f64 = m.event_space().map(|w| m.cond_logprob(&ctx, w).exp()).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    ensure(worst < 1e-6, || format!("normalization off by {worst:.2e}"))?;
    Ok(format!("hand counts exact, 300 contexts normalize within {worst:.1e}"))
}

fn transfer_rule() -> Check {
    let spec = ModelSpec::new(4, 16, 2, 24);
    let ck = common::synthetic_checkpoint(&spec, 11, "v");
    let dec = transfer_decoder(&ck, &spec, true).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for l in 0..spec.layers {
        for (c, s) in common::cross_self_pairs(&spec, l) {
            ensure(common::bits(&dec[&c]) == common::bits(&dec[&s]), || format!("layer {l}: {c} differs from {s}"))?;
            compared += 1;
        }
    }
    ensure(compared == 10 * spec.layers, || format!("compared {compared} tensors"))?;
    Ok(format!("{compared} tensors bit-identical over {} layers", spec.layers))
}

fn datagen_protocol() -> Check {
    let corpus = corpus::generate(&CorpusConfig { sentences: 400, seed: 12, ..CorpusConfig::default() }).map_err(|e| e.to_string())?;
    let cfg = DataGenConfig { seed: 13, ..DataGenConfig::default() };
    let pairs = datagen::generate(&corpus, &cfg, &fold_channels(&ChannelConfig::default(), cfg.folds, 14))
        .map_err(|e| e.to_string())?;
    let [ten, cut, drop, both] = Variant::ALL.map(|v| datagen::variant(&pairs, v, cfg.wer_max, cfg.dedup));
    let keys = |ps: &[ParallelPair]| ps.iter().map(|p| (p.source.clone(), p.target.clone())).collect::<BTreeSet<_>>();
    ensure(ten.len() < cut.len() && ten.len() < drop.len(), || {
        format!("sizes base {} cutout {} dropout {}", ten.len(), cut.len(), drop.len())
    })?;
    let union: BTreeSet<_> = keys(&cut).union(&keys(&drop)).cloned().collect();
    ensure(keys(&both) == union && both.len() == union.len(), || "+both is not the union".into())?;

    let pair = |target: &str, source: &str| ParallelPair {
        source: source.into(),
        target: target.into(),
        wer: wer(target, source).rate().unwrap(),
        fold: 0,
        tag: Tag::Base,
        seed: 0,
    };
    let boundary = vec![pair("a b", "a x"), pair("a b c d", "x y c d"), pair("a b c", "x y c"), pair("a b", "x y")];
    let kept: Vec<f64> = filter_dedup(boundary, 0.5, false).iter().map(|p| p.wer).collect();
    ensure(kept == [0.5, 0.5], || format!("kept WERs {kept:?}"))?;
    Ok(format!(
        "base {} < +cutout {}, base < +dropout {}, +both {} = union; WER 0.5 kept, 0.67 and 1.0 dropped",
        ten.len(),
        cut.len(),
        drop.len(),
        both.len()
    ))
}

fn end_to_end() -> Check {
    let err = |e: recorrect::Error| e.to_string();
    let cfg = PipelineConfig::preset(Scale::Small).with_seed(1);
    ensure(cfg.model.layers == 2 && cfg.model.hidden == 64 && cfg.model.heads == 4, || "preset is not L=2 H=64 A=4".into())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stage = Stage { dir: tmp.path(), cfg: &cfg };
    let clock = Instant::now();
    stage.gen_data().map_err(err)?;
    let mut sentences = lines(&stage.path(CORPUS_TRAIN));
    sentences.extend(lines(&stage.path(CORPUS_HELDOUT)));
    let vocab: BTreeSet<&str> = sentences.iter().flat_map(|s| s.split_whitespace()).collect();
    ensure(sentences.len() >= 2000 && vocab.len() <= 200, || {
        format!("{} sentences, {} word types", sentences.len(), vocab.len())
    })?;
    stage.vocab_build().map_err(err)?;
    stage.lm_fit().map_err(err)?;
    stage.decode().map_err(err)?;
    let noisy = stages::corpus_wer(&read_transcripts(&stage.path(DECODED_GREEDY)).map_err(err)?).rate().unwrap();
    ensure((0.12..=0.18).contains(&noisy), || format!("greedy held-out WER {noisy:.4}"))?;
    eprintln!("  data and decodes ready after {:.0}s, greedy WER {noisy:.4}", clock.elapsed().as_secs_f64());

    stage.train_mlm().map_err(err)?;
    stage.train_corrector(Variant::Both, "rand/rand", "e2e").map_err(err)?;
    let out = stage.path("corrected.e2e.jsonl");
    stage.correct("e2e", &stage.path(DECODED_GREEDY), &out).map_err(err)?;
    let fixed = stages::corpus_wer(&read_transcripts(&out).map_err(err)?).rate().unwrap();
    let rel = 1.0 - fixed / noisy;
    eprintln!("  corrector done after {:.0}s, corrected WER {fixed:.4}", clock.elapsed().as_secs_f64());
    ensure(rel >= 0.40, || format!("WER {noisy:.4} -> {fixed:.4}, relative reduction {:.1}%", rel * 100.0))?;

    let (rand, _) = stage.race("rand/rand").map_err(err)?;
    let (pre, _) = stage.race("pre/rand").map_err(err)?;
    let show = |s: Option<usize>| s.map_or("never".to_string(), |s| s.to_string());
    let ordered = match (pre, rand) {
        (Some(p), Some(r)) => p <= r,
        (Some(_), None) => true,
        (None, _) => false,
    };
    ensure(ordered, || format!("steps to loss {}: pre/rand {} rand/rand {}", cfg.ablate.race.target_loss, show(pre), show(rand)))?;
    Ok(format!(
        "WER {noisy:.4} -> {fixed:.4} ({:.1}% relative); steps to loss {}: pre/rand {} <= rand/rand {}",
        rel * 100.0,
        cfg.ablate.race.target_loss,
        show(pre),
        show(rand)
    ))
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap_or_default().lines().map(String::from).collect()
}

fn memorization() -> Check {
    let v = 32;
    let mut spec = ModelSpec::new(1, 32, 4, v);
    spec.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<Pair> = (0..32)
        .map(|_| {
            let n = rng.random_range(3..8);
            let src: Vec<u32> = (0..n).map(|_| rng.random_range(4..v as u32)).collect();
            let mut tgt = src.clone();
            tgt[rng.random_range(0..n)] = rng.random_range(4..v as u32);
            Pair { src, tgt }
        })
        .collect();
    let optim = OptimizerConfig { total_steps: 2000, ..OptimizerConfig::default() };
    ensure((optim.lr0, optim.beta1, optim.beta2, optim.poly_power) == (0.001, 0.95, 0.25, 2.0), || {
        "optimizer defaults changed".into()
    })?;
    let cfg = TrainConfig {
        optim,
        loss: LossConfig { smoothing: 0.0, exclude_pad: true },
        batch_tokens: usize::MAX,
        target_loss: Some(0.1),
        log_every: 0,
        ..TrainConfig::default()
    };
    let w = recorrect::init::init_random(&spec, 0.02, 0).map_err(|e| e.to_string())?;
    let report = Trainer::new(spec, w, cfg).and_then(|mut t| t.run(&pairs)).map_err(|e| e.to_string())?;
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    match report.reached_target_at {
        Some(s) => Ok(format!("loss < 0.1 at step {s}")),
        None => Err(format!("final loss {last:.4} after {} steps", report.losses.len())),
    }
}

fn determinism() -> Check {
    let run = |dir: &Path| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_recorrect"))
            .args(["--seed", "5", "--scale", "tiny", "--out-dir"])
            .arg(dir)
            .arg("demo")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    run(a.path())?;
    run(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure(fa.keys().eq(fb.keys()), || "different file sets".into())?;
    for (k, v) in &fa {
        ensure(fb[k] == *v, || format!("{k} differs"))?;
    }
    for needed in ["corpus.train.txt", "models/pretrained/tensors.bin", "models/both.rand-rand/tensors.bin", "reports/table1.csv"] {
        ensure(fa.contains_key(needed), || format!("{needed} missing"))?;
    }
    Ok(format!("{} files byte-identical", fa.len()))
}

/// Every file below `root` except the run log, which carries timestamps.
fn files(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != recorrect::cli::manifest::MANIFEST_LOG {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, 60, gradients),
        (2, 60, decoding_oracle),
        (3, 30, wer_oracle),
        (4, 60, ngram_hand_checks),
        (5, 60, transfer_rule),
        (6, 60, datagen_protocol),
        (7, 30 * 60, end_to_end),
        (8, 5 * 60, memorization),
        (9, 10 * 60, determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, limit, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let clock = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = clock.elapsed();
        let result = match result {
            Ok(d) if secs > Duration::from_secs(limit) => Err(format!("{d}; over the {limit}s budget")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        eprintln!("criterion {n}: {tag} ({detail}; {:.1}s)", secs.as_secs_f64());
        failed += usize::from(result.is_err());
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
