#![allow(dead_code)]

use recorrect::numkit::{Array, Real, Tape, Var};

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error of a whole gradient tensor: `|a - n| / max(|a|, |n|)` in
/// the Euclidean norm, the usual gradient-check metric. Tensors whose true
/// gradient is identically ~0 fall back to the absolute error.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(1e-6)
}

/// Builds a scalar loss from leaves on a fresh tape.
pub fn eval<T: Real>(
    leaves: &[Array<T>],
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
) -> (Tape<T>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
    let loss = build(&mut tape, &vars);
    (tape, vars, loss)
}

/// Max relative error between backward and central differences for every
/// leaf of the graph built by `build`, evaluated in f64.
pub fn gradcheck(leaves: &[Array<f64>], step: f64, build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let (tape, vars, loss) = eval(leaves, build);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[li]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; leaf.len()],
        };
        let numeric = numeric_grad(leaf.data(), step, |x| {
            let mut ls = leaves.to_vec();
            ls[li] = Array::new(leaf.shape(), x.to_vec()).unwrap();
            let (t, _, l) = eval(&ls, build);
            t.value(l).data()[0]
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    worst
}

/// Gradient check of the label-smoothed loss through a whole corrector with
/// every parameter as a leaf. Weights are drawn wider than the training
/// init so that every nonlinearity is exercised.
pub fn corrector_gradcheck(spec: &recorrect::model::ModelSpec, seed: u64) -> f64 {
    use recorrect::model::forward::{decode, encode, loss_targets, Bound, DropSites, LossConfig, Mode, SeqBatch};
    use std::collections::BTreeMap;

    let w = recorrect::init::init_random(spec, 0.4, seed).unwrap().cast::<f64>();
    let names: Vec<String> = w.tensors.keys().cloned().collect();
    let leaves: Vec<Array<f64>> = w.tensors.values().cloned().collect();
    let srcs: [&[u32]; 2] = [&[4, 9, 6, 3], &[7, 3]];
    let tins: [&[u32]; 2] = [&[2, 5, 11], &[2, 8]];
    let targets = [5u32, 11, 3, 8, 3, 1];
    let spec = spec.clone();
    let build = move |t: &mut Tape<f64>, v: &[Var]| {
        let bound = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()).collect::<BTreeMap<_, _>>());
        let src = SeqBatch::new(&srcs, &spec).unwrap();
        let tgt = SeqBatch::new(&tins, &spec).unwrap();
        let mut drops = DropSites::new(spec.dropout, Mode::Train, 17);
        let m = encode(t, &bound, &spec, &src, &mut drops).unwrap();
        let z = decode(t, &bound, &spec, m, &src, &tgt, &mut drops).unwrap();
        let cfg = LossConfig::default();
        t.cross_entropy(z, &loss_targets(&targets, &cfg), cfg.smoothing).unwrap()
    };
    gradcheck(&leaves, 1e-4, &build)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Random lattice over blank plus `alphabet`, frames drawn from a
/// Dirichlet-like spread of positive weights.
pub fn random_lattice(rng: &mut impl rand::Rng, alphabet: &[char], frames: usize) -> recorrect::decoding::FrameLattice {
    let c = alphabet.len() + 1;
    let w: Vec<f64> = (0..frames * c).map(|_| rng.random_range(0.05..1.0f64).powi(3)).collect();
    recorrect::decoding::FrameLattice::from_weights(alphabet.to_vec(), &w).unwrap()
}

/// Exhaustive decode: every frame-level path is enumerated and collapsed,
/// path probabilities are summed per text, and texts are ranked by
/// `acoustic + lambda * lm` with ties broken by text.
pub fn brute_force_decode(
    lattice: &recorrect::decoding::FrameLattice,
    lm: &recorrect::ngram::NgramModel,
    lambda: f64,
) -> (String, f64) {
    use std::collections::BTreeMap;
    let c = lattice.classes();
    let t_len = lattice.frames();
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    let mut path = vec![0usize; t_len];
    loop {
        let mut text = String::new();
        let mut prev = 0;
        let mut lp = 0.0;
        for (t, &col) in path.iter().enumerate() {
            lp += lattice.frame(t)[col];
            if col != 0 && col != prev {
                text.push(lattice.alphabet()[col - 1]);
            }
            prev = col;
        }
        let e = totals.entry(text).or_insert(f64::NEG_INFINITY);
        *e = log_add(*e, lp);
        // odometer increment
        let mut i = 0;
        while i < t_len {
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t_len {
            break;
        }
    }
    let mut best: Option<(String, f64)> = None;
    for (text, ac) in totals {
        let score = if lambda == 0.0 { ac } else { ac + lambda * lm.logprob(&text) };
        // BTreeMap iterates texts in ascending order, so strict > keeps the
        // lexicographically first among equal scores
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((text, score));
        }
    }
    best.unwrap()
}

/// Every (S, D, I) triple reachable by a complete edit script turning `r`
/// into `h`, found by enumerating all scripts.
pub fn all_edit_scripts(r: &[&str], h: &[&str]) -> Vec<(usize, usize, usize)> {
    fn go(r: &[&str], h: &[&str], acc: (usize, usize, usize), out: &mut Vec<(usize, usize, usize)>) {
        let (s, d, i) = acc;
        match (r.split_first(), h.split_first()) {
            (None, None) => out.push(acc),
            (Some((a, rt)), Some((b, ht))) => {
                go(rt, ht, if a == b { acc } else { (s + 1, d, i) }, out);
                go(rt, h, (s, d + 1, i), out);
                go(r, ht, (s, d, i + 1), out);
            }
            (Some((_, rt)), None) => go(rt, h, (s, d + 1, i), out),
            (None, Some((_, ht))) => go(r, ht, (s, d, i + 1), out),
        }
    }
    let mut out = Vec::new();
    go(r, h, (0, 0, 0), &mut out);
    out
}

/// Minimal edit count and the optimal (S, D, I) triples by exhaustive search.
pub fn exhaustive_wer(r: &[&str], h: &[&str]) -> (usize, Vec<(usize, usize, usize)>) {
    let all = all_edit_scripts(r, h);
    let best = all.iter().map(|(s, d, i)| s + d + i).min().expect("at least one script");
    let mut opt: Vec<_> = all.into_iter().filter(|(s, d, i)| s + d + i == best).collect();
    opt.sort();
    opt.dedup();
    (best, opt)
}

pub fn random_words(rng: &mut impl rand::Rng, max_len: usize) -> Vec<&'static str> {
    const W: [&str; 4] = ["a", "b", "c", "d"];
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| W[rng.random_range(0..W.len())]).collect()
}

/// Corrector-shaped checkpoint with distinct random values in every tensor,
/// stamped with vocabulary digest `digest`.
pub fn synthetic_checkpoint(spec: &recorrect::model::ModelSpec, seed: u64, digest: &str) -> recorrect::checkpoint::Checkpoint {
    let mut ck = recorrect::init::init_random(spec, 0.3, seed).unwrap().to_checkpoint(spec);
    for (name, t) in ck.tensors.iter_mut() {
        if !name.ends_with(".weight") && !name.starts_with("embeddings.") {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ name.len() as u64);
            t.data_mut().iter_mut().for_each(|x| *x = rand::Rng::random_range(&mut rng, -1.0..1.0));
        }
    }
    ck.meta.insert("vocab.digest".into(), digest.into());
    ck
}

/// Names of `decoder.{l}.cross_attn.*` tensors paired with the matching
/// `decoder.{l}.self_attn.*` names.
pub fn cross_self_pairs(spec: &recorrect::model::ModelSpec, l: usize) -> Vec<(String, String)> {
    spec.param_shapes()
        .into_iter()
        .filter(|(n, _)| n.starts_with(&format!("decoder.{l}.cross_attn.")))
        .map(|(n, _)| {
            let s = n.replacen("cross_attn", "self_attn", 1);
            (n, s)
        })
        .collect()
}

pub fn bits(a: &Array<f32>) -> Vec<u32> {
    a.data().iter().map(|x| x.to_bits()).collect()
}
