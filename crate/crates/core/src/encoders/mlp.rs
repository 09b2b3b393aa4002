use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::gelu_scalar;
use crate::numerics::{Matrix, Rng, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Gelu,
}

impl Activation {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Gelu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Gelu),
            t => Err(Error::Malformed(format!("unknown activation tag {t}"))),
        }
    }
}

/// Stack of dense layers; `params` alternates weight (`in × out`) and bias (`1 × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: Vec<Matrix>,
    pub acts: Vec<Activation>,
}

impl Mlp {
    pub fn new(dims: &[usize], acts: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(dims.len(), acts.len() + 1, "one activation per layer");
        let mut params = Vec::with_capacity(2 * acts.len());
        for w in dims.windows(2) {
            let std = (1.0 / w[0] as f64).sqrt();
            params.push(Matrix::from_fn(w[0], w[1], |_, _| std * rng.normal()));
            params.push(Matrix::zeros(1, w[1]));
        }
        Self { params, acts: acts.to_vec() }
    }

    pub fn depth(&self) -> usize {
        self.acts.len()
    }

    pub fn in_dim(&self) -> usize {
        self.params[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.params[self.params.len() - 1].cols()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.params.iter().step_by(2).map(|w| w.cols()));
        dims
    }

    /// Output of every layer (after its activation) for the rows of `x`.
    pub fn forward(&self, x: &Matrix) -> Vec<Matrix> {
        let mut outs = Vec::with_capacity(self.depth());
        let mut h = x.clone();
        for (l, act) in self.acts.iter().enumerate() {
            let (w, b) = (&self.params[2 * l], &self.params[2 * l + 1]);
            let mut z = h.matmul(w);
            for r in 0..z.rows() {
                for (v, bias) in z.row_mut(r).iter_mut().zip(b.row(0)) {
                    *v += bias;
                    if *act == Activation::Gelu {
                        *v = gelu_scalar(*v);
                    }
                }
            }
            outs.push(z.clone());
            h = z;
        }
        outs
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Recorded forward pass; returns every layer output.
    pub fn tape_forward(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Vec<Var> {
        let mut outs = Vec::with_capacity(self.depth());
        let mut h = x;
        for (l, act) in self.acts.iter().enumerate() {
            let z = tape.matmul(h, vars[2 * l]);
            let z = tape.add_row(z, vars[2 * l + 1]);
            h = match act {
                Activation::Identity => z,
                Activation::Gelu => tape.gelu(z),
            };
            outs.push(h);
        }
        outs
    }

    /// Rounds every parameter to the nearest f32 so checkpoints reload exactly.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Linear decay from `lr` to `lr / 10` over `steps`.
pub(crate) fn decayed_lr(lr: f64, step: usize, steps: usize) -> f64 {
    lr * (1.0 - 0.9 * step as f64 / steps.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = Rng::new(1);
        let mlp = Mlp::new(&[5, 7, 3], &[Activation::Gelu, Activation::Identity], &mut rng);
        let x = Matrix::from_fn(4, 5, |_, _| rng.normal());
        let plain = mlp.forward(&x);
        let mut tape = Tape::new();
        let vars = mlp.leaves(&mut tape);
        let xv = tape.leaf(x);
        let outs = mlp.tape_forward(&mut tape, xv, &vars);
        for (p, v) in plain.iter().zip(outs) {
            assert!(p.sub(tape.value(v)).max_abs() < 1e-12);
        }
        assert_eq!(mlp.layer_dims(), vec![5, 7, 3]);
    }
}
