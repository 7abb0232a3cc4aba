//! Human-readable dumps of attention weights and task similarity.

use std::fmt::Write as _;

use crate::corpus::{Sentence, TermKind};
use crate::error::Result;
use crate::model::{LayerState, Model};
use crate::tensor::Tensor;

/// Attention and similarity for one sentence in the form
///
/// ```text
/// sentence s1: the soup was hot
/// layer 1 aspect
/// 1: the (0.05) soup (0.77) was (0.08) hot (0.10)
/// ```
///
/// Categories are numbered from 1 in the legend order. Similarity matrices
/// follow each layer when feature sharing is on.
pub fn attention_dump(model: &Model, sentence: &Sentence) -> Result<String> {
    let fwd = model.forward(&sentence.tokens)?;
    Ok(format_dump(model, sentence, &fwd.layer_states()))
}

pub fn format_dump(model: &Model, sentence: &Sentence, layers: &[LayerState]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sentence {}: {}", sentence.id, sentence.tokens.join(" "));
    for (t, layer) in layers.iter().enumerate() {
        for kind in TermKind::BOTH {
            let _ = writeln!(out, "layer {} {}", t + 1, kind.as_str());
            for (c, ch) in layer.channel(kind).iter().enumerate() {
                let _ = write!(out, "{}:", c + 1);
                for (tok, a) in sentence.tokens.iter().zip(ch.attention.data()) {
                    let _ = write!(out, " {tok} ({a:.2})");
                }
                out.push('\n');
            }
        }
        if model.config().sharing.feature_sharing {
            for (name, s) in [("aspect", &layer.similarity_a), ("opinion", &layer.similarity_p)] {
                let _ = writeln!(out, "layer {} similarity {name}", t + 1);
                out.push_str(&format_matrix(s));
            }
        }
    }
    out
}

/// `1: FOOD` style legend for the category numbering used in dumps.
pub fn category_legend(categories: &[String]) -> String {
    categories
        .iter()
        .enumerate()
        .map(|(c, name)| format!("{}: {name}\n", c + 1))
        .collect()
}

fn format_matrix(m: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
