use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot, matmul, matmul_at_b_acc, sum_f64, transpose};
use super::{Array, NumError, Real};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dropout settings for one application site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
    pub train: bool,
}

impl Dropout {
    pub fn off() -> Self {
        Self {
            p: 0.0,
            seed: 0,
            train: false,
        }
    }

    fn active(&self) -> bool {
        self.train && self.p > 0.0
    }

    /// Inverted-dropout mask: each entry is 0 or `1/(1-p)`.
    fn mask<T: Real>(&self, n: usize) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let keep = T::of(1.0 / (1.0 - self.p));
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < self.p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect()
    }
}

/// Layout of a batched multi-head attention application.
///
/// Queries are `batch * q_len` rows, keys and values `batch * k_len` rows, all
/// `heads * head_dim` wide. Key `j` of sequence `b` is visible when
/// `j < key_lengths[b]` and, for causal attention, `j <= i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub key_lengths: Vec<usize>,
    pub causal: bool,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxRows(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
    CrossEntropy {
        logits: Var,
        /// `(p - q) / count` per element, precomputed at forward time.
        grad: Vec<T>,
    },
    Sum(Var),
    Dot(Var, Var),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumError> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            1 => Ok((1, s[0])),
            _ => Err(NumError::Shape {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumError {
        NumError::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a[m,k] * b[k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Array::new(&[m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                transpose_b: false,
            },
        ))
    }

    /// `a[m,k] * b[n,k]^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.mat_dims(a, "matmul_bt")?;
        let (n, k2) = self.mat_dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_bt", a, b));
        }
        let bt = transpose(self.value(b).data(), n, k);
        let mut out = vec![T::zero(); m * n];
        matmul(self.value(a).data(), &bt, m, k, n, &mut out);
        let value = Array::new(&[m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                transpose_b: true,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Array::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Array::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (_, n) = self.mat_dims(x, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (r, &bi) in row.iter_mut().zip(&b) {
                *r = *r + bi;
            }
        }
        let value = Array::new(self.shape(x), data)?;
        Ok(self.push(value, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let value = Array::new(self.shape(x), data).expect("same shape");
        self.push(value, Op::Scale(x, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let value = Array::new(self.shape(x), data).expect("same shape");
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise layer normalization of an `[m, n]` matrix.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumError> {
        let (m, n) = self.mat_dims(x, "layer_norm")?;
        if self.shape(gain) != [n] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [n] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        if eps <= 0.0 {
            return Err(NumError::Invalid("layer_norm eps must be positive"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let (mean, inv) = row_stats(row, eps);
            rstd[r] = T::of(inv);
            for c in 0..n {
                let h = T::of((row[c].f64() - mean) * inv);
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Array::new(self.shape(x), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn dropout(&mut self, x: Var, cfg: Dropout) -> Var {
        if !cfg.active() {
            return x;
        }
        let mask: Vec<T> = cfg.mask(self.value(x).len());
        let data = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let value = Array::new(self.shape(x), data).expect("same shape");
        self.push(value, Op::Dropout { x, mask })
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (rows, cols) = self.mat_dims(table, "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumError::Index { index: bad, len: rows });
        }
        if ids.is_empty() {
            return Err(NumError::Empty("gather"));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        let value = Array::new(&[ids.len(), cols], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumError> {
        let (_, n) = self.mat_dims(x, "softmax_rows")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Array::new(self.shape(x), data)?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// Scaled dot-product multi-head attention with optional causal masking
    /// and dropout on the attention weights.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        dropout: Dropout,
    ) -> Result<Var, NumError> {
        let (qr, width) = self.mat_dims(q, "attention")?;
        let (kr, kw) = self.mat_dims(k, "attention")?;
        if self.shape(k) != self.shape(v) || kw != width {
            return Err(self.mismatch("attention", k, v));
        }
        let l = &layout;
        if qr != l.batch * l.q_len || kr != l.batch * l.k_len || l.key_lengths.len() != l.batch {
            return Err(self.mismatch("attention", q, k));
        }
        if l.heads == 0 || width % l.heads != 0 {
            return Err(NumError::Invalid("attention width must divide into heads"));
        }
        let dh = width / l.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let plen = l.batch * l.heads * l.q_len * l.k_len;
        let mut probs = vec![T::zero(); plen];
        let mut scores = vec![T::zero(); l.k_len];
        for b in 0..l.batch {
            for h in 0..l.heads {
                for i in 0..l.q_len {
                    let qrow = &qd[(b * l.q_len + i) * width + h * dh..][..dh];
                    let visible = visible_keys(l, b, i);
                    if visible == 0 {
                        continue;
                    }
                    for (j, s) in scores.iter_mut().enumerate().take(visible) {
                        let krow = &kd[(b * l.k_len + j) * width + h * dh..][..dh];
                        *s = dot(qrow, krow) * scale;
                    }
                    softmax_in_place(&mut scores[..visible]);
                    let base = ((b * l.heads + h) * l.q_len + i) * l.k_len;
                    probs[base..base + visible].copy_from_slice(&scores[..visible]);
                }
            }
        }
        let mask = if dropout.active() {
            Some(dropout.mask::<T>(plen))
        } else {
            None
        };
        let mut out = vec![T::zero(); qr * width];
        for b in 0..l.batch {
            for h in 0..l.heads {
                for i in 0..l.q_len {
                    let base = ((b * l.heads + h) * l.q_len + i) * l.k_len;
                    let orow = &mut out[(b * l.q_len + i) * width + h * dh..][..dh];
                    for j in 0..visible_keys(l, b, i) {
                        let mut p = probs[base + j];
                        if let Some(m) = &mask {
                            p = p * m[base + j];
                        }
                        let vrow = &vd[(b * l.k_len + j) * width + h * dh..][..dh];
                        axpy(p, vrow, orow);
                    }
                }
            }
        }
        let value = Array::new(&[qr, width], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
                mask,
            },
        ))
    }

    /// Mean label-smoothed cross entropy over the rows whose target is `Some`.
    /// The smoothed target is `(1-eps) * onehot + eps / V`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var, NumError> {
        let (m, vocab) = self.mat_dims(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(NumError::Shape {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(NumError::Invalid("smoothing must lie in [0, 1)"));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NumError::Empty("cross_entropy targets"));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= vocab) {
            return Err(NumError::Index { index: bad, len: vocab });
        }
        let xs = self.value(logits).data();
        let off = smoothing / vocab as f64;
        let on = 1.0 - smoothing + off;
        let mut total = 0.0f64;
        let mut grad = vec![T::zero(); m * vocab];
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &xs[r * vocab..(r + 1) * vocab];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x.f64()));
            let z: f64 = row.iter().map(|&x| (x.f64() - max).exp()).sum();
            let log_z = max + z.ln();
            let mut loss = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let logp = x.f64() - log_z;
                let q = if c == t { on } else { off };
                if q > 0.0 {
                    loss -= q * logp;
                }
                grad[r * vocab + c] = T::of((logp.exp() - q) / count as f64);
            }
            total += loss;
        }
        let value = Array::scalar(T::of(total / count as f64));
        Ok(self.push(value, Op::CrossEntropy { logits, grad }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = sum_f64(self.value(x).data());
        self.push(Array::scalar(T::of(s)), Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("dot", a, b));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x.f64() * y.f64())
            .sum();
        Ok(self.push(Array::scalar(T::of(s)), Op::Dot(a, b)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let k = av.len() / m;
                let ga = slot(grads, *a, av.len());
                if *transpose_b {
                    // C = A B^T, B is [n,k]: dA = G B, dB = G^T A
                    let mut tmp = vec![T::zero(); m * k];
                    matmul(g, bv.data(), m, n, k, &mut tmp);
                    add_into(ga, &tmp);
                    let gb = slot(grads, *b, bv.len());
                    matmul_at_b_acc(g, av.data(), m, n, k, gb);
                } else {
                    // C = A B, B is [k,n]: dA = G B^T, dB = A^T G
                    let bt = transpose(bv.data(), k, n);
                    let mut tmp = vec![T::zero(); m * k];
                    matmul(g, &bt, m, n, k, &mut tmp);
                    add_into(ga, &tmp);
                    let gb = slot(grads, *b, bv.len());
                    matmul_at_b_acc(av.data(), g, m, k, n, gb);
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = slot(grads, *a, g.len());
                for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                    *o = *o + gi * bi;
                }
                let gb = slot(grads, *b, g.len());
                for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                    *o = *o + gi * ai;
                }
            }
            Op::AddRow { x, bias } => {
                add_into(slot(grads, *x, g.len()), g);
                let n = self.value(*bias).len();
                let mut acc = vec![0.0f64; n];
                for row in g.chunks(n) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v.f64();
                    }
                }
                let gb = slot(grads, *bias, n);
                for (o, a) in gb.iter_mut().zip(acc) {
                    *o = *o + T::of(a);
                }
            }
            Op::Scale(x, s) => {
                let gx = slot(grads, *x, g.len());
                for (o, &gi) in gx.iter_mut().zip(g) {
                    *o = *o + gi * *s;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = slot(grads, *x, g.len());
                for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o = *o + gi * gelu_grad(xi);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                let m = g.len() / n;
                let mut dgain = vec![0.0f64; n];
                let mut dbias = vec![0.0f64; n];
                let mut dx = vec![T::zero(); g.len()];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0f64;
                    let mut mean_dh = 0.0f64;
                    for c in 0..n {
                        let d = gr[c].f64() * gv[c].f64();
                        mean_d += d;
                        mean_dh += d * hr[c].f64();
                        dgain[c] += gr[c].f64() * hr[c].f64();
                        dbias[c] += gr[c].f64();
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    let inv = rstd[r].f64();
                    for c in 0..n {
                        let d = gr[c].f64() * gv[c].f64();
                        dx[r * n + c] = T::of(inv * (d - mean_d - hr[c].f64() * mean_dh));
                    }
                }
                add_into(slot(grads, *x, g.len()), &dx);
                add_f64_into(slot(grads, *gain, n), &dgain);
                add_f64_into(slot(grads, *bias, n), &dbias);
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((o, &gi), &mi) in gx.iter_mut().zip(g).zip(mask) {
                    *o = *o + gi * mi;
                }
            }
            Op::Gather { table, ids } => {
                let cols = self.value(*table).cols();
                let gt = slot(grads, *table, self.value(*table).len());
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![T::zero(); g.len()];
                for r in 0..g.len() / n {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
                    for c in 0..n {
                        dx[r * n + c] = T::of(yr[c].f64() * (gr[c].f64() - s));
                    }
                }
                add_into(slot(grads, *x, g.len()), &dx);
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
                mask,
            } => self.attention_backward(g, *q, *k, *v, layout, probs, mask.as_deref(), grads),
            Op::CrossEntropy { logits, grad } => {
                let s = g[0];
                let gl = slot(grads, *logits, grad.len());
                for (o, &d) in gl.iter_mut().zip(grad) {
                    *o = *o + d * s;
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                let gx = slot(grads, *x, self.value(*x).len());
                gx.iter_mut().for_each(|o| *o = *o + s);
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                let ga = slot(grads, *a, av.len());
                for (o, &bi) in ga.iter_mut().zip(&bv) {
                    *o = *o + s * bi;
                }
                let gb = slot(grads, *b, bv.len());
                for (o, &ai) in gb.iter_mut().zip(&av) {
                    *o = *o + s * ai;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        l: &AttentionLayout,
        probs: &[T],
        mask: Option<&[T]>,
        grads: &mut [Option<Vec<T>>],
    ) {
        let width = self.value(q).cols();
        let dh = width / l.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut dq = vec![T::zero(); qd.len()];
        let mut dk = vec![T::zero(); kd.len()];
        let mut dv = vec![T::zero(); vd.len()];
        let mut dp = vec![T::zero(); l.k_len];
        for b in 0..l.batch {
            for h in 0..l.heads {
                for i in 0..l.q_len {
                    let visible = visible_keys(l, b, i);
                    if visible == 0 {
                        continue;
                    }
                    let base = ((b * l.heads + h) * l.q_len + i) * l.k_len;
                    let qoff = (b * l.q_len + i) * width + h * dh;
                    let grow = &g[qoff..qoff + dh];
                    let mut s = 0.0f64;
                    for j in 0..visible {
                        let koff = (b * l.k_len + j) * width + h * dh;
                        let m = mask.map_or(T::one(), |m| m[base + j]);
                        let p = probs[base + j];
                        axpy(p * m, grow, &mut dv[koff..koff + dh]);
                        let d = dot(grow, &vd[koff..koff + dh]) * m;
                        dp[j] = d;
                        s += p.f64() * d.f64();
                    }
                    let s = T::of(s);
                    for j in 0..visible {
                        let koff = (b * l.k_len + j) * width + h * dh;
                        let ds = probs[base + j] * (dp[j] - s) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        axpy(ds, &kd[koff..koff + dh], &mut dq[qoff..qoff + dh]);
                        axpy(ds, &qd[qoff..qoff + dh], &mut dk[koff..koff + dh]);
                    }
                }
            }
        }
        add_into(slot(grads, q, dq.len()), &dq);
        add_into(slot(grads, k, dk.len()), &dk);
        add_into(slot(grads, v, dv.len()), &dv);
    }
}

fn visible_keys(l: &AttentionLayout, b: usize, i: usize) -> usize {
    let n = l.key_lengths[b].min(l.k_len);
    if l.causal {
        n.min(i + 1)
    } else {
        n
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient data for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn add_f64_into<T: Real>(dst: &mut [T], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + T::of(s);
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Mean and reciprocal standard deviation of a row, accumulated in f64.
pub(crate) fn row_stats<T: Real>(row: &[T], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = sum_f64(row) / n;
    let var = row
        .iter()
        .map(|&x| {
            let d = x.f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x.f64()));
    let mut z = 0.0f64;
    for x in row.iter_mut() {
        let e = (x.f64() - max).exp();
        z += e;
        *x = T::of(e);
    }
    for x in row.iter_mut() {
        *x = T::of(x.f64() / z);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Real>(x: T) -> T {
    let x = x.f64();
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    T::of(0.5 * x * (1.0 + t))
}

fn gelu_grad<T: Real>(x: T) -> T {
    let x = x.f64();
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    T::of(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}
