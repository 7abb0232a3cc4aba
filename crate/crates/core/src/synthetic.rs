//! Small generated corpora and embeddings for tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Annotation, Corpus, Sentence, TermKind};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;

struct Lexicon {
    name: &'static str,
    aspects: &'static [&'static str],
    opinions: &'static [&'static str],
}

const LEXICON: [Lexicon; 3] = [
    Lexicon {
        name: "FOOD",
        aspects: &["soup", "pasta", "steak"],
        opinions: &["tasty", "bland", "salty"],
    },
    Lexicon {
        name: "SERVICE",
        aspects: &["waiter", "staff", "service"],
        opinions: &["friendly", "rude", "prompt"],
    },
    Lexicon {
        name: "AMBIENCE",
        aspects: &["music", "decor", "lighting"],
        opinions: &["cozy", "loud", "dim"],
    },
];

/// Words that never carry a label.
const FILLER: [&str; 22] = [
    "the", "a", "was", "is", "and", "but", "very", "really", "i", "we", "thought", "found", "it", "place", "today",
    "quite", "so", "this", "our", "with", "overall", "too",
];

/// Every token the synthetic corpus can produce: 40 words.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = FILLER.to_vec();
    for lex in &LEXICON {
        v.extend_from_slice(lex.aspects);
        v.extend_from_slice(lex.opinions);
    }
    v
}

/// Appends `words` to `tokens`, returning the inclusive span they occupy.
fn push(tokens: &mut Vec<String>, words: &[&str]) -> (usize, usize) {
    let start = tokens.len();
    tokens.extend(words.iter().map(|w| w.to_string()));
    (start, tokens.len() - 1)
}

/// One clause about category `c`, appended to `tokens`.
fn clause<R: Rng>(rng: &mut R, c: usize, tokens: &mut Vec<String>, anns: &mut Vec<Annotation>) {
    let lex = &LEXICON[c];
    let aspect = *lex.aspects.choose(rng).expect("non-empty");
    let opinion = *lex.opinions.choose(rng).expect("non-empty");
    let mut ann = |span, kind| {
        anns.push(Annotation {
            span,
            kind,
            category: c,
        })
    };
    match rng.gen_range(0..4) {
        0 => {
            push(tokens, &["the"]);
            ann(push(tokens, &[aspect]), TermKind::Aspect);
            push(tokens, &["was"]);
            ann(push(tokens, &[opinion]), TermKind::Opinion);
        }
        1 => {
            push(tokens, &["our"]);
            ann(push(tokens, &[aspect]), TermKind::Aspect);
            push(tokens, &["is", "very"]);
            ann(push(tokens, &[opinion]), TermKind::Opinion);
        }
        2 => {
            push(tokens, &["we", "found", "the"]);
            ann(push(tokens, &[aspect]), TermKind::Aspect);
            push(tokens, &["quite"]);
            ann(push(tokens, &[opinion]), TermKind::Opinion);
        }
        _ => {
            push(tokens, &["really"]);
            ann(push(tokens, &[opinion]), TermKind::Opinion);
            ann(push(tokens, &[aspect]), TermKind::Aspect);
        }
    }
}

/// A patterned corpus over three categories (`FOOD`, `SERVICE`,
/// `AMBIENCE`). Each sentence mentions one or two categories, each with an
/// aspect and an opinion term drawn from that category's word list.
pub fn synthetic_corpus(sentences: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories: Vec<String> = LEXICON.iter().map(|l| l.name.to_string()).collect();
    let sentences = (0..sentences)
        .map(|i| {
            let mut tokens = Vec::new();
            let mut annotations = Vec::new();
            let first = i % LEXICON.len();
            if rng.gen_bool(0.3) {
                push(&mut tokens, &["overall"]);
            }
            clause(&mut rng, first, &mut tokens, &mut annotations);
            if rng.gen_bool(0.4) {
                let second = (first + rng.gen_range(1..LEXICON.len())) % LEXICON.len();
                push(&mut tokens, &[if rng.gen_bool(0.5) { "and" } else { "but" }]);
                clause(&mut rng, second, &mut tokens, &mut annotations);
            }
            if rng.gen_bool(0.3) {
                push(&mut tokens, &["today"]);
            }
            Sentence {
                id: format!("syn-{i}"),
                tokens,
                annotations,
            }
        })
        .collect();
    Corpus {
        categories,
        sentences,
    }
}

/// Random vectors in `[-1, 1]` for every word of [`vocabulary`].
pub fn synthetic_embeddings(dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(String, Vec<f64>)> = vocabulary()
        .into_iter()
        .map(|w| (w.to_string(), (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
        .collect();
    EmbeddingTable::from_entries(dim, entries)
}

/// Random vectors for an arbitrary vocabulary.
pub fn random_embeddings<'a, I>(words: I, dim: usize, seed: u64) -> Result<EmbeddingTable>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(String, Vec<f64>)> = words
        .into_iter()
        .map(|w| (w.to_string(), (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
        .collect();
    EmbeddingTable::from_entries(dim, entries)
}

/// `n` tokens `w0 … w{n-1}` with no annotations.
pub fn plain_tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}
