//! Annotated corpora and per-category BIO targets.
//!
//! The on-disk corpus is a JSON document:
//!
//! ```json
//! {
//!   "categories": ["FOOD#QUALITY", "SERVICE#GENERAL"],
//!   "sentences": [
//!     {"id": "s1", "tokens": ["The", "soup", "is", "hot"],
//!      "annotations": [{"span": [1, 1], "kind": "aspect", "category": "FOOD#QUALITY"}]}
//!   ]
//! }
//! ```
//!
//! Spans are inclusive token ranges.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Aspect,
    Opinion,
}

impl TermKind {
    pub const BOTH: [TermKind; 2] = [TermKind::Aspect, TermKind::Opinion];

    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Aspect => "aspect",
            TermKind::Opinion => "opinion",
        }
    }
}

/// Begin / inside / outside tag, in the fixed output-row order of the token heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bio {
    Begin = 0,
    Inside = 1,
    Outside = 2,
}

impl Bio {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Bio {
        match i {
            0 => Bio::Begin,
            1 => Bio::Inside,
            _ => Bio::Outside,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    /// Inclusive `[start, end]` token range.
    pub span: (usize, usize),
    pub kind: TermKind,
    /// Index into [`Corpus::categories`].
    pub category: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub annotations: Vec<Annotation>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub categories: Vec<String>,
    pub sentences: Vec<Sentence>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    categories: Vec<String>,
    sentences: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    id: String,
    tokens: Vec<String>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    span: (usize, usize),
    kind: TermKind,
    category: String,
}

#[derive(Serialize)]
struct RawSentenceOut<'a> {
    id: &'a str,
    tokens: &'a [String],
    annotations: Vec<RawAnnotation>,
}

#[derive(Serialize)]
struct RawCorpusOut<'a> {
    categories: &'a [String],
    sentences: Vec<RawSentenceOut<'a>>,
}

impl Corpus {
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn from_json_str(text: &str) -> Result<Corpus> {
        let raw: RawCorpus = serde_json::from_str(text)?;
        Corpus::from_raw(raw)
    }

    fn from_raw(raw: RawCorpus) -> Result<Corpus> {
        validate_categories(&raw.categories)?;
        let mut sentences = Vec::with_capacity(raw.sentences.len());
        for (i, value) in raw.sentences.into_iter().enumerate() {
            let label = value
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{i}"));
            let rs: RawSentence = serde_json::from_value(value).map_err(|e| Error::Record {
                sentence: label.clone(),
                msg: e.to_string(),
            })?;
            let annotations = rs
                .annotations
                .into_iter()
                .map(|a| {
                    let category = raw.categories.iter().position(|c| *c == a.category).ok_or_else(|| {
                        Error::Validation {
                            sentence: rs.id.clone(),
                            msg: format!("unknown category {:?}", a.category),
                        }
                    })?;
                    Ok(Annotation {
                        span: a.span,
                        kind: a.kind,
                        category,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let s = Sentence {
                id: rs.id,
                tokens: rs.tokens,
                annotations,
            };
            validate_sentence(&s, raw.categories.len())?;
            sentences.push(s);
        }
        Ok(Corpus {
            categories: raw.categories,
            sentences,
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let out = RawCorpusOut {
            categories: &self.categories,
            sentences: self
                .sentences
                .iter()
                .map(|s| RawSentenceOut {
                    id: &s.id,
                    tokens: &s.tokens,
                    annotations: s
                        .annotations
                        .iter()
                        .map(|a| RawAnnotation {
                            span: a.span,
                            kind: a.kind,
                            category: self.categories[a.category].clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Checks every sentence against the corpus invariants.
    pub fn validate(&self) -> Result<()> {
        validate_categories(&self.categories)?;
        for s in &self.sentences {
            validate_sentence(s, self.categories.len())?;
        }
        Ok(())
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    Corpus::from_json_str(&text)
}

fn validate_categories(categories: &[String]) -> Result<()> {
    if categories.is_empty() {
        return Err(Error::Corpus("category list is empty".into()));
    }
    let mut seen = HashSet::new();
    for c in categories {
        if !seen.insert(c) {
            return Err(Error::Corpus(format!("duplicate category {c:?}")));
        }
    }
    Ok(())
}

fn validate_sentence(s: &Sentence, num_categories: usize) -> Result<()> {
    let invalid = |msg: String| Error::Validation {
        sentence: s.id.clone(),
        msg,
    };
    if s.tokens.is_empty() {
        return Err(invalid("sentence has no tokens".into()));
    }
    for a in &s.annotations {
        let (start, end) = a.span;
        if start > end || end >= s.tokens.len() {
            return Err(invalid(format!(
                "span [{start}, {end}] out of bounds for {} tokens",
                s.tokens.len()
            )));
        }
        if a.category >= num_categories {
            return Err(invalid(format!("category index {} out of range", a.category)));
        }
    }
    for (i, a) in s.annotations.iter().enumerate() {
        for b in &s.annotations[i + 1..] {
            if a.kind == b.kind && a.category == b.category && a.span.0 <= b.span.1 && b.span.0 <= a.span.1 {
                return Err(invalid(format!(
                    "overlapping {} spans {:?} and {:?} in category {}",
                    a.kind.as_str(),
                    a.span,
                    b.span,
                    a.category
                )));
            }
        }
    }
    Ok(())
}

/// BIO tags for one (category, kind) channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel(pub Vec<Bio>);

impl Channel {
    /// `[3, n]` matrix with one one-hot column per token.
    pub fn one_hot(&self) -> Tensor {
        let n = self.0.len();
        let mut t = Tensor::zeros(&[3, n]);
        for (j, b) in self.0.iter().enumerate() {
            t.data_mut()[b.index() * n + j] = 1.0;
        }
        t
    }

    pub fn is_all_outside(&self) -> bool {
        self.0.iter().all(|&b| b == Bio::Outside)
    }
}

/// Per-category gold targets for the aspect and opinion channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldChannels {
    pub aspect: Vec<Channel>,
    pub opinion: Vec<Channel>,
}

impl GoldChannels {
    pub fn num_categories(&self) -> usize {
        self.aspect.len()
    }

    pub fn channel(&self, kind: TermKind, c: usize) -> &Channel {
        match kind {
            TermKind::Aspect => &self.aspect[c],
            TermKind::Opinion => &self.opinion[c],
        }
    }
}

/// Encodes a validated sentence into BIO channels for `num_categories` categories.
pub fn encode_gold(s: &Sentence, num_categories: usize) -> GoldChannels {
    let n = s.tokens.len();
    let blank = || (0..num_categories).map(|_| Channel(vec![Bio::Outside; n])).collect::<Vec<_>>();
    let mut gold = GoldChannels {
        aspect: blank(),
        opinion: blank(),
    };
    for a in &s.annotations {
        let ch = match a.kind {
            TermKind::Aspect => &mut gold.aspect[a.category],
            TermKind::Opinion => &mut gold.opinion[a.category],
        };
        ch.0[a.span.0] = Bio::Begin;
        for tag in &mut ch.0[a.span.0 + 1..=a.span.1] {
            *tag = Bio::Inside;
        }
    }
    gold
}

/// Sentence-level presence flag per category: present iff any token of the
/// category is tagged in either channel.
pub fn derive_sentence_labels(gold: &GoldChannels) -> Vec<bool> {
    gold.aspect
        .iter()
        .zip(&gold.opinion)
        .map(|(a, p)| !a.is_all_outside() || !p.is_all_outside())
        .collect()
}

/// One-hot `(absent, present)` target.
pub fn sentence_label_one_hot(present: bool) -> Tensor {
    if present {
        Tensor::vector(vec![0.0, 1.0])
    } else {
        Tensor::vector(vec![1.0, 0.0])
    }
}
