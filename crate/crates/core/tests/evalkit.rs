mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recorrect::evalkit::{
    ablation_report, wer, wer_corpus, wer_histogram, wer_words, AblationReport, EvalRun, HistogramTable,
};

#[test]
fn dp_matches_exhaustive_edit_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let (r, h) = (common::random_words(&mut rng, 5), common::random_words(&mut rng, 5));
        let b = wer_words(&r, &h);
        let (best, optimal) = common::exhaustive_wer(&r, &h);
        assert_eq!(b.edits(), best, "{r:?} / {h:?}");
        assert!(optimal.contains(&(b.substitutions, b.deletions, b.insertions)), "{r:?} / {h:?}");
        assert_eq!(b.ref_words, r.len());
    }
}

#[test]
fn ties_prefer_substitution_then_deletion() {
    // "a b" -> "b a": two substitutions or one deletion plus one insertion
    let b = wer("a b", "b a");
    assert_eq!((b.substitutions, b.deletions, b.insertions), (2, 0, 0));
}

#[test]
fn corpus_aggregation_sums_counts() {
    let pairs = [("a b c", "a b c"), ("d e f", "d x f"), ("g h", "g")];
    let whole = wer_corpus(pairs);
    let split = wer_corpus(pairs[..1].iter().copied()) + wer_corpus(pairs[1..].iter().copied());
    assert_eq!(whole, split);
    assert!((whole.rate().unwrap() - 2.0 / 8.0).abs() < 1e-12);
    let worst = pairs.iter().map(|(r, h)| wer(r, h).rate().unwrap()).fold(0.0, f64::max);
    assert!(whole.rate().unwrap() <= worst);
}

#[test]
fn histogram_places_hand_built_wers() {
    let h = wer_histogram(&[0.0, 0.2, 0.25, 0.6], 0.25).unwrap();
    assert_eq!(h.counts, [2, 1, 1]);
    assert_eq!(wer_histogram(&[0.0; 7], 0.1).unwrap().counts, [7]);
    assert!(wer_histogram(&[0.1], 0.0).is_err());
}

#[test]
fn report_renderings_agree() {
    let run = |system: &str, pairs: &[(&str, &str)]| EvalRun {
        system: system.into(),
        dataset: "test".into(),
        pairs: pairs.iter().map(|(r, h)| (r.to_string(), h.to_string())).collect(),
        config_hash: "abc".into(),
        seed: 1,
    };
    let r = ablation_report("t", &[run("x", &[("a b c", "a b c"), ("d e f", "d x f")]), run("y", &[("a", "b")])]).unwrap();
    assert_eq!(r.rows[0].wer, "16.67");
    assert_eq!(r.rows[1].wer, "100.00");
    assert_eq!(AblationReport::from_csv("t", &r.to_csv()).unwrap(), r);
    let text = r.to_text();
    assert!(text.contains("16.67") && text.contains("100.00"));
    assert!(ablation_report("t", &[]).is_err());
    assert!(ablation_report("t", &[run("x", &[("a", "a")]), run("x", &[("b", "b")])]).is_err());
    let table = HistogramTable::new(0.5, vec![("s".into(), wer_histogram(&[0.0, 0.7], 0.5).unwrap())]).unwrap();
    assert!(table.to_csv().lines().count() >= 3);
}

proptest! {
    #[test]
    fn deletions_and_insertions_are_dual(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, h) = (common::random_words(&mut rng, 7), common::random_words(&mut rng, 7));
        let (a, b) = (wer_words(&r, &h), wer_words(&h, &r));
        prop_assert_eq!(a.edits(), b.edits());
        prop_assert_eq!(a.deletions, b.insertions);
        prop_assert_eq!(a.insertions, b.deletions);
        prop_assert_eq!(wer_words(&r, &r).edits(), 0);
    }

    #[test]
    fn histogram_bins_sum_to_sentence_count(ws in prop::collection::vec(0.0f64..3.0, 0..50), w in 0.05f64..1.0) {
        prop_assert_eq!(wer_histogram(&ws, w).unwrap().total(), ws.len());
    }
}
