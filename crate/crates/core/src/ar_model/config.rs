use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::InverseSqrtSchedule;

/// Id ranges of a token model.
///
/// `[0, tokens)` are generable image tokens, `[tokens, tokens + aux)` are
/// conditioning tokens (stage-2 source tokens), followed by `classes` class
/// tokens, then BOS and SEP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabLayout {
    pub tokens: usize,
    #[serde(default)]
    pub aux: usize,
    #[serde(default)]
    pub classes: usize,
}

impl VocabLayout {
    pub fn new(tokens: usize, classes: usize) -> Self {
        Self { tokens, aux: 0, classes }
    }

    pub fn size(&self) -> usize {
        self.tokens + self.aux + self.classes + 2
    }

    pub fn aux_id(&self, t: usize) -> Result<u32> {
        if t >= self.aux {
            return Err(Error::InvalidArgument(format!("aux token {t} outside vocabulary of {}", self.aux)));
        }
        Ok((self.tokens + t) as u32)
    }

    pub fn class_offset(&self) -> usize {
        self.tokens + self.aux
    }

    pub fn class_id(&self, c: usize) -> Result<u32> {
        if c >= self.classes {
            return Err(Error::InvalidArgument(format!("unknown condition class {c} (model has {})", self.classes)));
        }
        Ok((self.class_offset() + c) as u32)
    }

    pub fn bos(&self) -> u32 {
        (self.class_offset() + self.classes) as u32
    }

    pub fn sep(&self) -> u32 {
        self.bos() + 1
    }
}

/// Adam block of the AR trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArOptimizer {
    pub beta1: f64,
    pub beta2: f64,
    pub peak_lr: f64,
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for ArOptimizer {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, peak_lr: 1e-3, warmup: 100, grad_clip: 1.0 }
    }
}

impl ArOptimizer {
    pub fn schedule(&self) -> InverseSqrtSchedule {
        InverseSqrtSchedule { peak: self.peak_lr, warmup: self.warmup }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab: VocabLayout,
    pub max_len: usize,
    pub dropout: f64,
    pub optimizer: ArOptimizer,
    pub steps: usize,
    pub batch: usize,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ffn_dim: 512,
            vocab: VocabLayout::default(),
            max_len: 80,
            dropout: 0.0,
            optimizer: ArOptimizer::default(),
            steps: 2000,
            batch: 32,
        }
    }
}

impl ArConfig {
    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("ar config: {m}")));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("layers, model_dim, heads and ffn_dim must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} is not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.vocab.tokens == 0 {
            return bad("vocabulary has no image tokens".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(o.peak_lr > 0.0 && o.peak_lr.is_finite()) || !(o.grad_clip >= 0.0) {
            return bad("peak_lr must be positive and grad_clip nonnegative".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        Ok(())
    }

    /// Fails unless a sequence of `grid_len` tokens plus its leading token fits.
    pub fn check_grid_fits(&self, grid_len: usize) -> Result<()> {
        if self.max_len < grid_len + 1 {
            return Err(Error::Config(format!("max_len {} cannot hold {grid_len} tokens plus a prefix", self.max_len)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_ids_are_disjoint() {
        let v = VocabLayout { tokens: 10, aux: 4, classes: 3 };
        assert_eq!(v.size(), 19);
        assert_eq!(v.aux_id(3).unwrap(), 13);
        assert_eq!(v.class_id(0).unwrap(), 14);
        assert_eq!(v.bos(), 17);
        assert_eq!(v.sep(), 18);
        assert!(v.class_id(3).is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = ArConfig { model_dim: 30, heads: 4, vocab: VocabLayout::new(8, 0), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
