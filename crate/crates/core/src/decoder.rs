//! Turning per-category channel probabilities into tags and term spans.

use serde::{Deserialize, Serialize};

use crate::corpus::{Bio, TermKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on `Σp = 1` when validating decoder inputs.
const PROB_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CategoryLabel {
    BeginAspect,
    InsideAspect,
    BeginOpinion,
    InsideOpinion,
    Outside,
}

impl CategoryLabel {
    fn from_channel(kind: TermKind, tag: Bio) -> Self {
        match (kind, tag) {
            (_, Bio::Outside) => CategoryLabel::Outside,
            (TermKind::Aspect, Bio::Begin) => CategoryLabel::BeginAspect,
            (TermKind::Aspect, Bio::Inside) => CategoryLabel::InsideAspect,
            (TermKind::Opinion, Bio::Begin) => CategoryLabel::BeginOpinion,
            (TermKind::Opinion, Bio::Inside) => CategoryLabel::InsideOpinion,
        }
    }

    /// The tag this label contributes to channel `kind`.
    pub fn tag_for(self, kind: TermKind) -> Bio {
        match (self, kind) {
            (CategoryLabel::BeginAspect, TermKind::Aspect) | (CategoryLabel::BeginOpinion, TermKind::Opinion) => {
                Bio::Begin
            }
            (CategoryLabel::InsideAspect, TermKind::Aspect) | (CategoryLabel::InsideOpinion, TermKind::Opinion) => {
                Bio::Inside
            }
            _ => Bio::Outside,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            CategoryLabel::BeginAspect => "BA",
            CategoryLabel::InsideAspect => "IA",
            CategoryLabel::BeginOpinion => "BP",
            CategoryLabel::InsideOpinion => "IP",
            CategoryLabel::Outside => "O",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryDecision {
    pub label: CategoryLabel,
    /// Probability of the winning entry in the winning channel.
    pub prob: f64,
}

fn check_probs(name: &str, y: &[f64]) -> Result<()> {
    if y.len() != 3 {
        return Err(Error::Contract(format!("{name} must have 3 entries, got {}", y.len())));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) || (y.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
        return Err(Error::Contract(format!("{name} is not a probability vector: {y:?}")));
    }
    Ok(())
}

fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..y.len() {
        if y[i] > y[best] {
            best = i;
        }
    }
    best
}

/// Combines the aspect and opinion distributions over (B, I, O) for one
/// token and category.
///
/// Both channels O gives O; exactly one O gives the other channel's tag;
/// otherwise the channel with the larger winning probability wins, ties going
/// to the aspect channel. Argmax ties resolve to the lowest index.
pub fn decide_category_label(aspect: &[f64], opinion: &[f64]) -> Result<CategoryDecision> {
    check_probs("aspect distribution", aspect)?;
    check_probs("opinion distribution", opinion)?;
    let (ia, ip) = (argmax(aspect), argmax(opinion));
    let (ta, tp) = (Bio::from_index(ia), Bio::from_index(ip));
    let pick_aspect = match (ta, tp) {
        (Bio::Outside, Bio::Outside) => true,
        (_, Bio::Outside) => true,
        (Bio::Outside, _) => false,
        _ => aspect[ia] >= opinion[ip],
    };
    Ok(if pick_aspect {
        CategoryDecision {
            label: CategoryLabel::from_channel(TermKind::Aspect, ta),
            prob: aspect[ia],
        }
    } else {
        CategoryDecision {
            label: CategoryLabel::from_channel(TermKind::Opinion, tp),
            prob: opinion[ip],
        }
    })
}

/// All non-O `(category, label)` decisions for a token; empty means untagged.
pub fn integrate_categories(decisions: &[CategoryDecision]) -> Vec<(usize, CategoryLabel)> {
    decisions
        .iter()
        .enumerate()
        .filter(|(_, d)| d.label != CategoryLabel::Outside)
        .map(|(c, d)| (c, d.label))
        .collect()
}

/// Maximal `B I*` runs as inclusive spans. An `I` with no open span starts one.
pub fn extract_spans(tags: &[Bio]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (j, &t) in tags.iter().enumerate() {
        match t {
            Bio::Begin => {
                if let Some(s) = open.take() {
                    spans.push((s, j - 1));
                }
                open = Some(j);
            }
            Bio::Inside => {
                if open.is_none() {
                    open = Some(j);
                }
            }
            Bio::Outside => {
                if let Some(s) = open.take() {
                    spans.push((s, j - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, tags.len() - 1));
    }
    spans
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermSpan {
    pub span: (usize, usize),
    pub kind: TermKind,
    pub category: usize,
}

/// Per-token decisions for every category, `[category][token]`.
pub fn decide_sentence(aspect: &[Tensor], opinion: &[Tensor]) -> Result<Vec<Vec<CategoryDecision>>> {
    aspect
        .iter()
        .zip(opinion)
        .map(|(ya, yp)| {
            if ya.shape() != yp.shape() || ya.rank() != 2 || ya.rows() != 3 {
                return Err(Error::shape("decode", ya.shape(), yp.shape()));
            }
            (0..ya.cols())
                .map(|j| decide_category_label(ya.column(j).data(), yp.column(j).data()))
                .collect()
        })
        .collect()
}

/// Decodes `[3, n]` channel probabilities for every category into term spans.
pub fn decode_spans(aspect: &[Tensor], opinion: &[Tensor]) -> Result<Vec<TermSpan>> {
    let decisions = decide_sentence(aspect, opinion)?;
    Ok(spans_from_decisions(&decisions))
}

pub fn spans_from_decisions(decisions: &[Vec<CategoryDecision>]) -> Vec<TermSpan> {
    let mut out = Vec::new();
    for (c, per_token) in decisions.iter().enumerate() {
        for kind in TermKind::BOTH {
            let tags: Vec<Bio> = per_token.iter().map(|d| d.label.tag_for(kind)).collect();
            out.extend(extract_spans(&tags).into_iter().map(|span| TermSpan {
                span,
                kind,
                category: c,
            }));
        }
    }
    out.sort();
    out
}

/// One span in tagged output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub span: (usize, usize),
    pub kind: TermKind,
    pub category: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<TaggedSpan>,
}

pub fn tag_sentence(id: &str, tokens: &[String], spans: &[TermSpan], categories: &[String]) -> TaggedSentence {
    TaggedSentence {
        id: id.to_string(),
        tokens: tokens.to_vec(),
        spans: spans
            .iter()
            .map(|s| TaggedSpan {
                span: s.span,
                kind: s.kind,
                category: categories[s.category].clone(),
                text: tokens[s.span.0..=s.span.1].join(" "),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Bio::{Begin as B, Inside as I, Outside as O};

    #[test]
    fn three_case_rule() {
        let d = decide_category_label(&[0.1, 0.1, 0.8], &[0.2, 0.1, 0.7]).unwrap();
        assert_eq!(d.label, CategoryLabel::Outside);
        let d = decide_category_label(&[0.6, 0.3, 0.1], &[0.05, 0.05, 0.9]).unwrap();
        assert_eq!(d.label, CategoryLabel::BeginAspect);
        assert_eq!(d.prob, 0.6);
        let d = decide_category_label(&[0.5, 0.2, 0.3], &[0.6, 0.3, 0.1]).unwrap();
        assert_eq!(d.label, CategoryLabel::BeginOpinion);
        let d = decide_category_label(&[0.2, 0.1, 0.7], &[0.1, 0.8, 0.1]).unwrap();
        assert_eq!(d.label, CategoryLabel::InsideOpinion);
    }

    #[test]
    fn ties_go_to_aspect_and_low_index() {
        let d = decide_category_label(&[0.5, 0.25, 0.25], &[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(d.label, CategoryLabel::BeginAspect);
        let third = 1.0 / 3.0;
        let d = decide_category_label(&[third; 3], &[third; 3]).unwrap();
        assert_eq!(d.label, CategoryLabel::BeginAspect);
    }

    #[test]
    fn rejects_non_probabilities() {
        assert!(decide_category_label(&[0.5, 0.5], &[0.2, 0.3, 0.5]).is_err());
        assert!(decide_category_label(&[0.5, 0.6, 0.1], &[0.2, 0.3, 0.5]).is_err());
        assert!(decide_category_label(&[1.5, -0.5, 0.0], &[0.2, 0.3, 0.5]).is_err());
    }

    #[test]
    fn integrates_multi_category_tokens() {
        let o = CategoryDecision {
            label: CategoryLabel::Outside,
            prob: 0.9,
        };
        assert!(integrate_categories(&[o; 4]).is_empty());
        let mut ds = vec![o; 7];
        ds[1] = CategoryDecision {
            label: CategoryLabel::BeginAspect,
            prob: 0.5,
        };
        ds[6] = CategoryDecision {
            label: CategoryLabel::BeginOpinion,
            prob: 0.76,
        };
        assert_eq!(
            integrate_categories(&ds),
            vec![(1, CategoryLabel::BeginAspect), (6, CategoryLabel::BeginOpinion)]
        );
        assert_eq!(integrate_categories(&ds[..3]), vec![(1, CategoryLabel::BeginAspect)]);
    }

    #[test]
    fn span_extraction() {
        assert_eq!(extract_spans(&[B, I, O]), vec![(0, 1)]);
        assert_eq!(extract_spans(&[O, I, I]), vec![(1, 2)]);
        assert_eq!(extract_spans(&[B, O, B]), vec![(0, 0), (2, 2)]);
        assert_eq!(extract_spans(&[B, B, I]), vec![(0, 0), (1, 2)]);
        assert!(extract_spans(&[O, O]).is_empty());
    }

    #[test]
    fn decodes_sentence_spans() {
        // One category, three tokens: aspect B at 0, opinion B at 2.
        let ya = Tensor::from_rows(&[&[0.8, 0.1, 0.1], &[0.1, 0.1, 0.1], &[0.1, 0.8, 0.8]]).unwrap();
        let yp = Tensor::from_rows(&[&[0.1, 0.1, 0.7], &[0.1, 0.1, 0.1], &[0.8, 0.8, 0.2]]).unwrap();
        let spans = decode_spans(&[ya], &[yp]).unwrap();
        assert_eq!(
            spans,
            vec![
                TermSpan {
                    span: (0, 0),
                    kind: TermKind::Aspect,
                    category: 0
                },
                TermSpan {
                    span: (2, 2),
                    kind: TermKind::Opinion,
                    category: 0
                },
            ]
        );
        let tagged = tag_sentence("s", &["good".into(), "x".into(), "soup".into()], &spans, &["FOOD".into()]);
        assert_eq!(tagged.spans[1].text, "soup");
        assert_eq!(tagged.spans[1].category, "FOOD");
    }

    fn prob3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, 3).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn decision_is_scale_invariant(a in prob3(), p in prob3(), k in 0.1f64..10.0) {
            let base = decide_category_label(&a, &p).unwrap();
            let rescale = |v: &[f64]| {
                let w: Vec<f64> = v.iter().map(|x| x * k).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let other = decide_category_label(&rescale(&a), &rescale(&p)).unwrap();
            prop_assert_eq!(base.label, other.label);
        }
    }
}
