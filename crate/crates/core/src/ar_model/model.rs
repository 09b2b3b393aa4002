//! Pre-LayerNorm decoder-only transformer.
//!
//! Parameter order (also the checkpoint order): token embedding `V×d`,
//! positional embedding `max_len×d`; per block `ln1 γ, ln1 β, W_qkv d×3d,
//! b_qkv, W_o d×d, b_o, ln2 γ, ln2 β, W_1 d×f, b_1, W_2 f×d, b_2`; then
//! final `ln γ, ln β, W_out d×V, b_out`.

use super::config::ArConfig;
use super::train::TrainLogRow;
use crate::error::{Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::tape::{gelu_scalar, layer_norm_row};
use crate::numerics::{Matrix, Rng, Tape, Var};

const PER_BLOCK: usize = 12;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub cfg: ArConfig,
    pub params: Vec<Matrix>,
    pub log: Vec<TrainLogRow>,
}

/// Keys and values of every block for the positions seen so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub(crate) struct TapeOutput {
    pub logits: Var,
    /// Embedding output, then the residual stream after each block.
    pub hidden: Vec<Var>,
}

fn vec_mat(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (o, wv) in out.iter_mut().zip(w.row(i)) {
                *o += xi * wv;
            }
        }
    }
    out
}

impl ArModel {
    pub fn new(cfg: &ArConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let (v, d, f) = (cfg.vocab_size(), cfg.model_dim, cfg.ffn_dim);
        let resid_std = INIT_STD / (2.0 * cfg.layers as f64).sqrt();
        let mut normal = |r: usize, c: usize, std: f64| Matrix::from_fn(r, c, |_, _| std * rng.normal());
        let mut params = vec![normal(v, d, INIT_STD), normal(cfg.max_len, d, INIT_STD)];
        for _ in 0..cfg.layers {
            params.push(Matrix::filled(1, d, 1.0));
            params.push(Matrix::zeros(1, d));
            params.push(normal(d, 3 * d, INIT_STD));
            params.push(Matrix::zeros(1, 3 * d));
            params.push(normal(d, d, resid_std));
            params.push(Matrix::zeros(1, d));
            params.push(Matrix::filled(1, d, 1.0));
            params.push(Matrix::zeros(1, d));
            params.push(normal(d, f, INIT_STD));
            params.push(Matrix::zeros(1, f));
            params.push(normal(f, d, resid_std));
            params.push(Matrix::zeros(1, d));
        }
        params.push(Matrix::filled(1, d, 1.0));
        params.push(Matrix::zeros(1, d));
        params.push(normal(d, v, INIT_STD));
        params.push(Matrix::zeros(1, v));
        Ok(Self { cfg: cfg.clone(), params, log: Vec::new() })
    }

    /// Expected parameter shapes for `cfg`, in storage order.
    pub fn param_shapes(cfg: &ArConfig) -> Vec<(usize, usize)> {
        let (v, d, f) = (cfg.vocab_size(), cfg.model_dim, cfg.ffn_dim);
        let mut s = vec![(v, d), (cfg.max_len, d)];
        for _ in 0..cfg.layers {
            s.extend([(1, d), (1, d), (d, 3 * d), (1, 3 * d), (d, d), (1, d), (1, d), (1, d), (d, f), (1, f), (f, d), (1, d)]);
        }
        s.extend([(1, d), (1, d), (d, v), (1, v)]);
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.cfg.vocab_size()
    }

    pub(crate) fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    fn block(&self, l: usize) -> &[Matrix] {
        let base = 2 + PER_BLOCK * l;
        &self.params[base..base + PER_BLOCK]
    }

    fn head(&self) -> &[Matrix] {
        &self.params[2 + PER_BLOCK * self.cfg.layers..]
    }

    pub fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of length {} exceeds max_len {}",
                ids.len(),
                self.cfg.max_len
            )));
        }
        let v = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= v) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {v}")));
        }
        Ok(())
    }

    pub(crate) fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Full forward over `ids.len() / seq_len` packed sequences.
    ///
    /// With `dropout` set, residual-branch outputs are dropped with the
    /// configured rate using the given stream.
    pub(crate) fn tape_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ids: &[usize],
        seq_len: usize,
        mut dropout: Option<&mut Rng>,
    ) -> TapeOutput {
        let positions: Vec<usize> = (0..ids.len()).map(|r| r % seq_len).collect();
        let tok = tape.embedding(vars[0], ids);
        let pos = tape.embedding(vars[1], &positions);
        let mut x = tape.add(tok, pos);
        let mut hidden = vec![x];
        let p = self.cfg.dropout;
        let mut drop = |tape: &mut Tape, v: Var| -> Var {
            match dropout.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let n = tape.value(v).data().len();
                    let keep = 1.0 / (1.0 - p);
                    let mask = (0..n).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect();
                    tape.dropout(v, mask)
                }
                _ => v,
            }
        };
        for l in 0..self.cfg.layers {
            let b = &vars[2 + PER_BLOCK * l..2 + PER_BLOCK * (l + 1)];
            let h = tape.layer_norm(x, b[0], b[1]);
            let qkv = tape.matmul(h, b[2]);
            let qkv = tape.add_row(qkv, b[3]);
            let att = tape.causal_attention(qkv, self.cfg.heads, seq_len);
            let o = tape.matmul(att, b[4]);
            let o = tape.add_row(o, b[5]);
            let o = drop(tape, o);
            x = tape.add(x, o);
            let h = tape.layer_norm(x, b[6], b[7]);
            let f = tape.matmul(h, b[8]);
            let f = tape.add_row(f, b[9]);
            let f = tape.gelu(f);
            let f = tape.matmul(f, b[10]);
            let f = tape.add_row(f, b[11]);
            let f = drop(tape, f);
            x = tape.add(x, f);
            hidden.push(x);
        }
        let hd = &vars[2 + PER_BLOCK * self.cfg.layers..];
        let h = tape.layer_norm(x, hd[0], hd[1]);
        let logits = tape.matmul(h, hd[2]);
        let logits = tape.add_row(logits, hd[3]);
        TapeOutput { logits, hidden }
    }

    /// Logits at every position of `ids` through the full-sequence path (`len × V`).
    pub fn forward_logits(&self, ids: &[u32]) -> Result<Matrix> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let out = self.tape_forward(&mut tape, &vars, &ids, ids.len(), None);
        Ok(tape.value(out.logits).clone())
    }

    /// Residual-stream states (`len × d`) after the embedding and after each block.
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Vec<Matrix>> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let out = self.tape_forward(&mut tape, &vars, &ids, ids.len(), None);
        Ok(out.hidden.iter().map(|&h| tape.value(h).clone()).collect())
    }

    pub fn new_cache(&self) -> KvCache {
        let cap = self.cfg.max_len * self.cfg.model_dim;
        KvCache {
            keys: (0..self.cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..self.cfg.layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    /// Appends `token` to the cached context and returns the next-token logits.
    pub fn step(&self, cache: &mut KvCache, token: u32) -> Result<Vec<f64>> {
        if cache.len >= self.cfg.max_len {
            return Err(Error::InvalidArgument(format!("context already holds max_len {} tokens", self.cfg.max_len)));
        }
        if token as usize >= self.vocab_size() {
            return Err(Error::InvalidArgument(format!("token id {token} outside vocabulary of {}", self.vocab_size())));
        }
        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let t = cache.len;
        let mut x: Vec<f64> =
            self.params[0].row(token as usize).iter().zip(self.params[1].row(t)).map(|(a, b)| a + b).collect();
        let mut h = vec![0.0; d];
        let mut scores = vec![0.0; t + 1];
        for l in 0..self.cfg.layers {
            let b = self.block(l);
            layer_norm_row(&x, b[0].data(), b[1].data(), &mut h);
            let qkv = vec_mat(&h, &b[2], &b[3]);
            cache.keys[l].extend_from_slice(&qkv[d..2 * d]);
            cache.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            let mut att = vec![0.0; d];
            for head in 0..heads {
                let q = &qkv[head * hd..(head + 1) * hd];
                for (s, sc) in scores.iter_mut().enumerate() {
                    *sc = dot(q, &keys[s * d + head * hd..s * d + (head + 1) * hd]) * scale;
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    sum += *sc;
                }
                let out = &mut att[head * hd..(head + 1) * hd];
                for (s, sc) in scores.iter().enumerate() {
                    let p = sc / sum;
                    for (o, v) in out.iter_mut().zip(&values[s * d + head * hd..s * d + (head + 1) * hd]) {
                        *o += p * v;
                    }
                }
            }
            let o = vec_mat(&att, &b[4], &b[5]);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            layer_norm_row(&x, b[6].data(), b[7].data(), &mut h);
            let mut f = vec_mat(&h, &b[8], &b[9]);
            f.iter_mut().for_each(|v| *v = gelu_scalar(*v));
            let f = vec_mat(&f, &b[10], &b[11]);
            x.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
        cache.len += 1;
        let hd = self.head();
        layer_norm_row(&x, hd[0].data(), hd[1].data(), &mut h);
        Ok(vec_mat(&h, &hd[2], &hd[3]))
    }

    /// Next-token scores after `prefix`, computed incrementally.
    pub fn logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("prefix must contain at least the leading token".into()));
        }
        self.check_ids(prefix)?;
        let mut cache = self.new_cache();
        let mut out = Vec::new();
        for &t in prefix {
            out = self.step(&mut cache, t)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar_model::VocabLayout;

    fn tiny() -> ArConfig {
        ArConfig {
            layers: 2,
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            vocab: VocabLayout::new(7, 2),
            max_len: 12,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_match_declared_order() {
        let cfg = tiny();
        let m = ArModel::new(&cfg, 1).unwrap();
        let shapes: Vec<_> = m.params.iter().map(|p| p.shape()).collect();
        assert_eq!(shapes, ArModel::param_shapes(&cfg));
    }

    #[test]
    fn cached_path_matches_full_forward() {
        let m = ArModel::new(&tiny(), 2).unwrap();
        let ids = [9, 3, 1, 4, 1, 5, 2, 6];
        let full = m.forward_logits(&ids).unwrap();
        let mut cache = m.new_cache();
        for (t, &id) in ids.iter().enumerate() {
            let step = m.step(&mut cache, id).unwrap();
            for (a, b) in step.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_overflow() {
        let m = ArModel::new(&tiny(), 3).unwrap();
        assert!(m.logits(&[99]).is_err());
        assert!(m.logits(&[1; 13]).is_err());
        assert!(m.logits(&[]).is_err());
    }
}
