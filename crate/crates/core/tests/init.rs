mod common;

use recorrect::init::{apply_plan, transfer_decoder, transfer_encoder, InitPlan, Source};
use recorrect::model::ModelSpec;

fn spec() -> ModelSpec {
    ModelSpec::new(3, 16, 2, 24)
}

#[test]
fn cross_attention_is_a_bitwise_copy_of_self_attention() {
    let spec = spec();
    let ck = common::synthetic_checkpoint(&spec, 3, "v");
    let dec = transfer_decoder(&ck, &spec, true).unwrap();
    for l in 0..spec.layers {
        let pairs = common::cross_self_pairs(&spec, l);
        assert_eq!(pairs.len(), 10);
        for (c, s) in pairs {
            assert_eq!(common::bits(&dec[&c]), common::bits(&dec[&s]), "layer {l}: {c}");
            let src = s.replacen("decoder", "encoder", 1);
            assert_eq!(common::bits(&dec[&s]), common::bits(&ck.tensors[&src]));
        }
    }
    let plain = transfer_decoder(&ck, &spec, false).unwrap();
    assert!(plain.keys().all(|k| !k.contains("cross_attn")));
}

#[test]
fn perturbing_one_checkpoint_layer_changes_only_that_layer() {
    let spec = spec();
    let ck = common::synthetic_checkpoint(&spec, 4, "v");
    let mut bumped = ck.clone();
    bumped.tensors.get_mut("encoder.2.self_attn.q.weight").unwrap().data_mut()[0] += 1.0;
    let (a, b) = (transfer_decoder(&ck, &spec, true).unwrap(), transfer_decoder(&bumped, &spec, true).unwrap());
    let changed: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    assert_eq!(changed, ["decoder.2.cross_attn.q.weight", "decoder.2.self_attn.q.weight"]);
}

#[test]
fn plan_cells_differ_only_where_a_side_is_pretrained() {
    let spec = spec();
    let ck = common::synthetic_checkpoint(&spec, 5, "v");
    let plan = |e, d| InitPlan { encoder_source: e, decoder_source: d, std: 0.1, seed: 9, ..Default::default() };
    let (rr, _) = apply_plan(&spec, &plan(Source::Random, Source::Random), None, "v").unwrap();
    let (pr, rep) = apply_plan(&spec, &plan(Source::Pretrained, Source::Random), Some(&ck), "v").unwrap();
    let (rp, _) = apply_plan(&spec, &plan(Source::Random, Source::Pretrained), Some(&ck), "v").unwrap();
    let (pp, _) = apply_plan(&spec, &plan(Source::Pretrained, Source::Pretrained), Some(&ck), "v").unwrap();
    let enc = transfer_encoder(&ck, &spec, "v").unwrap();
    for (k, v) in &pr.tensors {
        if k.starts_with("decoder.") {
            assert_eq!(v, &rr.tensors[k], "{k}");
        } else if let Some(t) = enc.get(k) {
            assert_eq!(v, t, "{k}");
        }
    }
    assert_eq!(rep.sources["encoder.0.ffn.in.weight"], "checkpoint:encoder.0.ffn.in.weight");
    for l in 0..spec.layers {
        for (c, s) in common::cross_self_pairs(&spec, l) {
            assert_eq!(common::bits(&rp.tensors[&c]), common::bits(&rp.tensors[&s]));
            assert_eq!(common::bits(&pp.tensors[&c]), common::bits(&pp.tensors[&s]));
        }
    }
    assert_eq!(rp.tensors["embeddings.token"], ck.tensors["embeddings.token"]);
    assert_eq!(rp.tensors["encoder.1.ffn.in.weight"], rr.tensors["encoder.1.ffn.in.weight"]);
    let no_dup = InitPlan { duplicate_cross_attention: false, ..plan(Source::Random, Source::Pretrained) };
    let (w, rep) = apply_plan(&spec, &no_dup, Some(&ck), "v").unwrap();
    assert_eq!(w.tensors["decoder.0.cross_attn.q.weight"], rr.tensors["decoder.0.cross_attn.q.weight"]);
    assert_eq!(rep.fallbacks.len(), 30);
}

#[test]
fn transfer_rejects_mismatched_checkpoints() {
    let spec = spec();
    let ck = common::synthetic_checkpoint(&spec, 6, "v");
    let pre = InitPlan { encoder_source: Source::Pretrained, ..Default::default() };
    assert!(apply_plan(&spec, &pre, Some(&ck), "other").is_err());
    assert!(apply_plan(&spec, &pre, None, "v").is_err());
    let deeper = ModelSpec::new(4, 16, 2, 24);
    assert!(transfer_decoder(&ck, &deeper, true).is_err());
    let heads = ModelSpec::new(3, 16, 4, 24);
    assert!(transfer_decoder(&ck, &heads, true).is_err());
    let wider = ModelSpec::new(3, 32, 2, 24);
    let e = transfer_decoder(&ck, &wider, true).unwrap_err().to_string();
    assert!(e.contains("decoder") || e.contains("encoder"), "{e}");
}
