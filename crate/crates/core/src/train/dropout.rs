use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: kept units are scaled by `1/(1 − rate)` so the expected
/// activation is unchanged, and evaluation needs no rescaling.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        Self::from_rng(rate, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rate: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain("dropout", format!("rate must lie in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// A fresh mask, or `None` when the rate is zero.
    pub fn mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mut m = Tensor::zeros(shape);
        for v in m.data_mut() {
            if self.rng.gen::<f64>() < keep {
                *v = scale;
            }
        }
        Some(m)
    }

    /// Multiplies `x` by a fresh mask; the identity at rate zero.
    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self.mask(g.value(x).shape()) {
            None => Ok(x),
            Some(m) => {
                let m = g.constant(m);
                g.mul(x, m)
            }
        }
    }
}
