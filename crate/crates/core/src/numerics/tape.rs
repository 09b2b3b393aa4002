//! Matrix-level reverse-mode differentiation.
//!
//! Each forward call records one node; [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a reverse topological order because a
//! node can only reference earlier nodes.

use super::matrix::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    CausalAttention { qkv: Var, heads: usize, seq_len: usize, probs: Vec<f64> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    MeanPoolRows { x: Var, group: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Matrix, count: usize },
    Mse { x: Var, target: Matrix },
    Sum(Var),
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; exactly zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Inference-time GELU shared with non-tape code paths.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu(x)
}

pub(crate) fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Parameter or input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1×d` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        let mut v = self.value(x).clone();
        assert_eq!(v.cols(), b.cols(), "bias width mismatch");
        let b = b.data().to_vec();
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1×d`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[(r, c)] = h;
                out[(r, c)] = h * g[c] + b[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Gathers rows of `table` by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select_rows(ids);
        self.push(v, Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Multi-head causal self-attention over packed `[q | k | v]` rows.
    ///
    /// `qkv` holds `batch·seq_len` rows of width `3·d`; the output has width `d`.
    /// Row `t` of a sequence only reads rows `0..=t` of the same sequence.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize, seq_len: usize) -> Var {
        let x = self.value(qkv);
        let (rows, width) = x.shape();
        assert_eq!(width % 3, 0, "qkv width must be a multiple of 3");
        assert_eq!(rows % seq_len, 0, "rows must be a multiple of seq_len");
        let d = width / 3;
        assert_eq!(d % heads, 0, "model dim must divide into heads");
        let hd = d / heads;
        let batch = rows / seq_len;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Matrix::zeros(rows, d);
        let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
        let mut scores = vec![0.0; seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq_len * seq_len;
                for t in 0..seq_len {
                    let qrow = &x.row(b * seq_len + t)[h * hd..(h + 1) * hd];
                    for s in 0..=t {
                        let krow = &x.row(b * seq_len + s)[d + h * hd..d + (h + 1) * hd];
                        scores[s] = super::matrix::dot(qrow, krow) * scale;
                    }
                    softmax_in_place(&mut scores[..=t]);
                    let orow = &mut out.row_mut(b * seq_len + t)[h * hd..(h + 1) * hd];
                    for s in 0..=t {
                        let p = scores[s];
                        probs[pbase + t * seq_len + s] = p;
                        let vrow = &x.row(b * seq_len + s)[2 * d + h * hd..2 * d + (h + 1) * hd];
                        for (o, v) in orow.iter_mut().zip(vrow) {
                            *o += p * v;
                        }
                    }
                }
            }
        }
        self.push(out, Op::CausalAttention { qkv, heads, seq_len, probs })
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = (row.iter().map(|a| a * a).sum::<f64>() + NORM_EPS).sqrt();
            row.iter_mut().for_each(|a| *a /= n);
            norms.push(n);
        }
        self.push(v, Op::L2NormalizeRows { x, norms })
    }

    /// Averages consecutive groups of `group` rows.
    pub fn mean_pool_rows(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows() % group, 0, "rows must divide into groups");
        let n = xv.rows() / group;
        let mut v = Matrix::zeros(n, xv.cols());
        for r in 0..xv.rows() {
            let dst = r / group;
            for c in 0..xv.cols() {
                v[(dst, c)] += xv[(r, c)] / group as f64;
            }
        }
        self.push(v, Op::MeanPoolRows { x, group })
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            softmax_in_place(probs.row_mut(r));
            if let Some(t) = *t {
                let row = lv.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Matrix) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "mse shape mismatch");
        let n = xv.data().len().max(1) as f64;
        let loss = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Matrix::filled(1, 1, loss), Op::Mse { x, target: target.clone() })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).data().len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Inverted dropout with a caller-supplied keep mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.data().len(), mask.len(), "dropout mask length");
        let data: Vec<f64> = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = Matrix::from_vec(xv.rows(), xv.cols(), data).expect("same shape");
        self.push(v, Op::Dropout { x, mask })
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar node");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(&g, false, bv, true, &mut ga, 0.0);
                    accumulate(&mut grads, *a, ga);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, &g, false, &mut gb, 0.0);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: ga = g b, gb = gᵀ a
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, g.matmul(bv));
                    accumulate(&mut grads, *b, g.t_matmul(av));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s)),
                Op::Gelu(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| gv * gelu_grad(xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dotp = super::matrix::dot(g.row(r), y.row(r));
                        for c in 0..y.cols() {
                            gx[(r, c)] = y[(r, c)] * (g[(r, c)] - dotp);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (n, d) = xhat.shape();
                    let gv = self.value(*gamma).data();
                    let mut ggamma = Matrix::zeros(1, d);
                    let mut gbeta = Matrix::zeros(1, d);
                    let mut gx = Matrix::zeros(n, d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let grow = g.row(r);
                        let hrow = xhat.row(r);
                        let mut sum_dx = 0.0;
                        let mut sum_dx_h = 0.0;
                        for c in 0..d {
                            ggamma[(0, c)] += grow[c] * hrow[c];
                            gbeta[(0, c)] += grow[c];
                            dxhat[c] = grow[c] * gv[c];
                            sum_dx += dxhat[c];
                            sum_dx_h += dxhat[c] * hrow[c];
                        }
                        let inv = inv_std[r];
                        let df = d as f64;
                        for c in 0..d {
                            gx[(r, c)] = inv / df * (df * dxhat[c] - sum_dx - hrow[c] * sum_dx_h);
                        }
                    }
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Embedding { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::CausalAttention { qkv, heads, seq_len, probs } => {
                    let gx = attention_backward(self.value(*qkv), &g, *heads, *seq_len, probs);
                    accumulate(&mut grads, *qkv, gx);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dotp = super::matrix::dot(g.row(r), y.row(r));
                        for c in 0..y.cols() {
                            gx[(r, c)] = (g[(r, c)] - y[(r, c)] * dotp) / norms[r];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanPoolRows { x, group } => {
                    let xv = self.value(*x);
                    let gx = Matrix::from_fn(xv.rows(), xv.cols(), |r, c| g[(r / group, c)] / *group as f64);
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let upstream = g.data()[0];
                    let mut gl = Matrix::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let w = upstream / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                for c in 0..probs.cols() {
                                    gl[(r, c)] = w * probs[(r, c)];
                                }
                                gl[(r, t)] -= w;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Mse { x, target } => {
                    let upstream = g.data()[0];
                    let xv = self.value(*x);
                    let n = xv.data().len().max(1) as f64;
                    let gx = xv.zip_map(target, |a, b| 2.0 * (a - b) * upstream / n);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.data()[0]));
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate(&mut grads, *x, Matrix::from_vec(g.rows(), g.cols(), data).expect("shape"));
                }
            }
        }

        // Only leaves keep their adjoints; intermediate buffers were consumed above.
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn attention_backward(x: &Matrix, g: &Matrix, heads: usize, seq_len: usize, probs: &[f64]) -> Matrix {
    let (rows, width) = x.shape();
    let d = width / 3;
    let hd = d / heads;
    let batch = rows / seq_len;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut gx = Matrix::zeros(rows, width);
    let mut dp = vec![0.0; seq_len];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq_len * seq_len;
            for t in 0..seq_len {
                let trow = b * seq_len + t;
                let gout = &g.row(trow)[h * hd..(h + 1) * hd];
                let p = &probs[pbase + t * seq_len..pbase + t * seq_len + t + 1];
                let mut weighted = 0.0;
                for s in 0..=t {
                    let vrow = &x.row(b * seq_len + s)[2 * d + h * hd..2 * d + (h + 1) * hd];
                    dp[s] = super::matrix::dot(gout, vrow);
                    weighted += p[s] * dp[s];
                }
                for s in 0..=t {
                    let srow = b * seq_len + s;
                    // dV_s += p_ts · gout_t
                    for j in 0..hd {
                        gx[(srow, 2 * d + h * hd + j)] += p[s] * gout[j];
                    }
                    let dscore = p[s] * (dp[s] - weighted) * scale;
                    if dscore != 0.0 {
                        for j in 0..hd {
                            let kv = x[(srow, d + h * hd + j)];
                            let qv = x[(trow, h * hd + j)];
                            gx[(trow, h * hd + j)] += dscore * kv;
                            gx[(srow, d + h * hd + j)] += dscore * qv;
                        }
                    }
                }
            }
        }
    }
    gx
}
