//! Output heads and the training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::{Axis, Tensor};

/// `[3, n]` label distributions over (B, I, O), one column per token.
pub fn token_probs(g: &mut Graph, w: NodeId, features: NodeId) -> Result<NodeId> {
    let logits = g.matmul(w, features)?;
    g.softmax_axis(logits, Axis::Columns)
}

/// `softmax(W_c · [õ^a : õ^p])` over (absent, present).
pub fn sentence_probs(g: &mut Graph, w: NodeId, summary_a: NodeId, summary_p: NodeId) -> Result<NodeId> {
    let both = g.concat(&[summary_a, summary_p])?;
    let logits = g.matmul(w, both)?;
    g.softmax(logits)
}

/// Summed cross-entropy of every prediction against its one-hot target.
pub fn summed_cross_entropy(g: &mut Graph, pairs: &[(NodeId, &Tensor)]) -> Result<NodeId> {
    let terms = pairs
        .iter()
        .map(|&(p, t)| g.cross_entropy(p, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

/// `L = L_sen + λ·L_tok`, or `λ·L_tok` when `sentence` is absent.
pub fn combined_loss(g: &mut Graph, token: NodeId, sentence: Option<NodeId>, lambda: f64) -> Result<NodeId> {
    let weighted = g.scale(token, lambda);
    match sentence {
        Some(s) => g.add(s, weighted),
        None => Ok(weighted),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub token: f64,
    /// `None` when the auxiliary task is disabled.
    pub sentence: Option<f64>,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn add(&mut self, other: &LossReport) {
        self.token += other.token;
        self.total += other.total;
        if let (Some(a), Some(b)) = (self.sentence.as_mut(), other.sentence) {
            *a += b;
        }
    }

    pub fn zero(lambda: f64, auxiliary: bool) -> Self {
        LossReport {
            token: 0.0,
            sentence: auxiliary.then_some(0.0),
            lambda,
            total: 0.0,
        }
    }
}
