//! Exact-match span scoring.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Sentence, TermKind};
use crate::decoder::TermSpan;
use crate::error::{Error, Result};
use crate::model::Model;

/// Precision, recall and F1 with the counts behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// Scores from counts; precision and recall are 0 when their denominator is.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }

    fn absorb(&mut self, correct: usize, predicted: usize, gold: usize) {
        *self = Prf::from_counts(self.correct + correct, self.predicted + predicted, self.gold + gold);
    }
}

/// Exact set match between predictions and gold items.
pub fn f1_exact<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf {
    Prf::from_counts(pred.intersection(gold).count(), pred.len(), gold.len())
}

/// Category-stripped `(span, kind)` pairs, one per span tagged with at least
/// one category.
pub fn accumulate_agnostic(spans: &[TermSpan]) -> BTreeSet<((usize, usize), TermKind)> {
    spans.iter().map(|s| (s.span, s.kind)).collect()
}

/// Gold spans of a sentence.
pub fn gold_spans(s: &Sentence) -> Vec<TermSpan> {
    let mut v: Vec<TermSpan> = s
        .annotations
        .iter()
        .map(|a| TermSpan {
            span: a.span,
            kind: a.kind,
            category: a.category,
        })
        .collect();
    v.sort();
    v
}

/// Anything that can produce term spans for a sentence.
pub trait SpanPredictor: Sync {
    fn categories(&self) -> &[String];
    fn predict_spans(&self, sentence: &Sentence) -> Result<Vec<TermSpan>>;
}

impl SpanPredictor for Model {
    fn categories(&self) -> &[String] {
        Model::categories(self)
    }

    fn predict_spans(&self, sentence: &Sentence) -> Result<Vec<TermSpan>> {
        self.decode(&sentence.tokens)
    }
}

/// Predicts exactly the gold annotations.
pub struct GoldOracle {
    pub categories: Vec<String>,
}

impl SpanPredictor for GoldOracle {
    fn categories(&self) -> &[String] {
        &self.categories
    }

    fn predict_spans(&self, sentence: &Sentence) -> Result<Vec<TermSpan>> {
        Ok(gold_spans(sentence))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryScores {
    pub name: String,
    pub asc: Prf,
    pub opc: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Category-specific aspect terms.
    pub asc: Prf,
    /// Category-specific opinion terms.
    pub opc: Prf,
    /// Aspect terms with categories stripped.
    #[serde(rename = "as")]
    pub as_: Prf,
    /// Opinion terms with categories stripped.
    pub op: Prf,
    pub per_category: Vec<CategoryScores>,
    pub sentences: usize,
}

impl EvalReport {
    /// Micro F1 over the category-specific aspect and opinion spans together.
    pub fn token_f1(&self) -> f64 {
        Prf::from_counts(
            self.asc.correct + self.opc.correct,
            self.asc.predicted + self.opc.predicted,
            self.asc.gold + self.opc.gold,
        )
        .f1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table with one row per metric family, then per category.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.per_category.iter().map(|c| c.name.len()).max().unwrap_or(0).max(8);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}  {:>7}  {:>7}", "family", "precision", "recall", "f1", "correct", "pred", "gold");
        let row = |out: &mut String, name: &str, p: &Prf| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}  {:>7}  {:>7}",
                name, p.precision, p.recall, p.f1, p.correct, p.predicted, p.gold
            );
        };
        row(&mut out, "ASC", &self.asc);
        row(&mut out, "OPC", &self.opc);
        row(&mut out, "AS", &self.as_);
        row(&mut out, "OP", &self.op);
        if !self.per_category.is_empty() {
            out.push('\n');
            for c in &self.per_category {
                row(&mut out, &format!("{} ASC", c.name), &c.asc);
                row(&mut out, &format!("{} OPC", c.name), &c.opc);
            }
        }
        out
    }
}

/// Micro-averaged scores of per-sentence predictions against gold spans.
pub fn score(categories: &[String], predicted: &[Vec<TermSpan>], gold: &[Vec<TermSpan>]) -> Result<EvalReport> {
    if predicted.len() != gold.len() {
        return Err(Error::shape("score", &[predicted.len()], &[gold.len()]));
    }
    let mut asc = Prf::default();
    let mut opc = Prf::default();
    let mut as_ = Prf::default();
    let mut op = Prf::default();
    let mut per: Vec<(Prf, Prf)> = vec![Default::default(); categories.len()];
    for (p, g) in predicted.iter().zip(gold) {
        for kind in TermKind::BOTH {
            let ps: BTreeSet<TermSpan> = p.iter().filter(|s| s.kind == kind).copied().collect();
            let gs: BTreeSet<TermSpan> = g.iter().filter(|s| s.kind == kind).copied().collect();
            let specific = f1_exact(&ps, &gs);
            let agnostic = f1_exact(
                &accumulate_agnostic(&ps.iter().copied().collect::<Vec<_>>()),
                &accumulate_agnostic(&gs.iter().copied().collect::<Vec<_>>()),
            );
            let (spec_acc, agn_acc) = match kind {
                TermKind::Aspect => (&mut asc, &mut as_),
                TermKind::Opinion => (&mut opc, &mut op),
            };
            spec_acc.absorb(specific.correct, specific.predicted, specific.gold);
            agn_acc.absorb(agnostic.correct, agnostic.predicted, agnostic.gold);
            for (c, slot) in per.iter_mut().enumerate() {
                let pc: BTreeSet<&TermSpan> = ps.iter().filter(|s| s.category == c).collect();
                let gc: BTreeSet<&TermSpan> = gs.iter().filter(|s| s.category == c).collect();
                let r = f1_exact(&pc, &gc);
                let acc = match kind {
                    TermKind::Aspect => &mut slot.0,
                    TermKind::Opinion => &mut slot.1,
                };
                acc.absorb(r.correct, r.predicted, r.gold);
            }
        }
    }
    Ok(EvalReport {
        asc,
        opc,
        as_,
        op,
        per_category: categories
            .iter()
            .zip(per)
            .map(|(name, (asc, opc))| CategoryScores {
                name: name.clone(),
                asc,
                opc,
            })
            .collect(),
        sentences: predicted.len(),
    })
}

/// Decodes every sentence (in parallel, collected in corpus order) and scores it.
pub fn evaluate<P: SpanPredictor + ?Sized>(predictor: &P, corpus: &Corpus) -> Result<EvalReport> {
    let cats = predictor.categories();
    if cats.len() != corpus.categories.len() {
        return Err(Error::shape("evaluate", &[cats.len()], &[corpus.categories.len()]));
    }
    if cats != corpus.categories.as_slice() {
        return Err(Error::Corpus(format!(
            "category set {:?} does not match the model's {:?}",
            corpus.categories, cats
        )));
    }
    let predicted: Vec<Vec<TermSpan>> = corpus
        .sentences
        .par_iter()
        .map(|s| predictor.predict_spans(s))
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<TermSpan>> = corpus.sentences.iter().map(gold_spans).collect();
    score(&corpus.categories, &predicted, &gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;
    use proptest::prelude::*;

    fn span(s: usize, e: usize, kind: TermKind, c: usize) -> TermSpan {
        TermSpan {
            span: (s, e),
            kind,
            category: c,
        }
    }

    #[test]
    fn hand_scored_cases() {
        let a = span(0, 0, TermKind::Aspect, 0);
        let b = span(2, 3, TermKind::Aspect, 0);
        let c = span(5, 5, TermKind::Aspect, 1);
        let gold: BTreeSet<_> = [a, b].into();
        let r = f1_exact(&[a, c].into(), &gold);
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        let r = f1_exact(&gold.clone(), &gold);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = f1_exact(&BTreeSet::new(), &gold);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn agnostic_accumulation_dedupes_categories() {
        let s = [span(1, 1, TermKind::Opinion, 0), span(1, 1, TermKind::Opinion, 5)];
        assert_eq!(accumulate_agnostic(&s).len(), 1);
        assert!(accumulate_agnostic(&[]).is_empty());
        let d = [span(0, 0, TermKind::Aspect, 0), span(2, 2, TermKind::Aspect, 0)];
        assert_eq!(accumulate_agnostic(&d).len(), 2);
    }

    fn fixture() -> Corpus {
        let ann = |s, e, kind, category| Annotation {
            span: (s, e),
            kind,
            category,
        };
        Corpus {
            categories: vec!["FOOD".into(), "SERVICE".into()],
            sentences: vec![
                Sentence {
                    id: "a".into(),
                    tokens: "the soup was hot".split(' ').map(String::from).collect(),
                    annotations: vec![ann(1, 1, TermKind::Aspect, 0), ann(3, 3, TermKind::Opinion, 0)],
                },
                Sentence {
                    id: "b".into(),
                    tokens: "rude waiter and cold soup".split(' ').map(String::from).collect(),
                    annotations: vec![
                        ann(0, 0, TermKind::Opinion, 1),
                        ann(1, 1, TermKind::Aspect, 1),
                        ann(3, 3, TermKind::Opinion, 0),
                        ann(4, 4, TermKind::Aspect, 0),
                    ],
                },
            ],
        }
    }

    #[test]
    fn gold_oracle_scores_one() {
        let corpus = fixture();
        let r = evaluate(
            &GoldOracle {
                categories: corpus.categories.clone(),
            },
            &corpus,
        )
        .unwrap();
        for p in [r.asc, r.opc, r.as_, r.op] {
            assert_eq!(p.f1, 1.0);
        }
    }

    #[test]
    fn hand_decoded_predictions_match_hand_table() {
        let corpus = fixture();
        let gold: Vec<_> = corpus.sentences.iter().map(gold_spans).collect();
        let predicted = vec![
            // Right aspect; opinion under the wrong category.
            vec![span(1, 1, TermKind::Aspect, 0), span(3, 3, TermKind::Opinion, 1)],
            // Waiter found, "rude" missed, soup found twice (second category spurious).
            vec![
                span(1, 1, TermKind::Aspect, 1),
                span(4, 4, TermKind::Aspect, 0),
                span(4, 4, TermKind::Aspect, 1),
                span(3, 3, TermKind::Opinion, 0),
            ],
        ];
        let r = score(&corpus.categories, &predicted, &gold).unwrap();
        // ASC: 3 correct of 4 predicted, 3 gold.
        assert_eq!((r.asc.correct, r.asc.predicted, r.asc.gold), (3, 4, 3));
        assert!((r.asc.f1 - 2.0 * 0.75 / 1.75).abs() < 1e-15);
        // AS: the duplicate soup collapses, 3 of 3.
        assert_eq!((r.as_.correct, r.as_.predicted, r.as_.gold), (3, 3, 3));
        // OPC: 1 correct of 2 predicted, 3 gold.
        assert_eq!((r.opc.correct, r.opc.predicted, r.opc.gold), (1, 2, 3));
        // OP: "hot" counts once stripped, 2 of 2 predicted, 3 gold.
        assert_eq!((r.op.correct, r.op.predicted, r.op.gold), (2, 2, 3));
        assert_eq!(r.per_category[1].asc.predicted, 2);
        assert!(r.to_text().contains("ASC"));
        assert!(r.to_json().unwrap().contains("\"as\""));
    }

    #[test]
    fn category_mismatch_is_rejected() {
        let corpus = fixture();
        let oracle = GoldOracle {
            categories: vec!["FOOD".into()],
        };
        assert!(matches!(evaluate(&oracle, &corpus), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn precision_and_recall_swap(p in proptest::collection::btree_set(0u8..20, 0..10), g in proptest::collection::btree_set(0u8..20, 0..10)) {
            let a = f1_exact(&p, &g);
            let b = f1_exact(&g, &p);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert!((0.0..=1.0).contains(&a.f1));
        }
    }
}
