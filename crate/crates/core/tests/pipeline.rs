use mtmn::synthetic::{synthetic_corpus, synthetic_embeddings, vocabulary};
use mtmn::train::{load_checkpoint, save_checkpoint};
use mtmn::{
    evaluate, load_corpus, load_embeddings, train, Annotation, Corpus, Model, ModelConfig, Sentence, TermKind,
    TrainConfig,
};
use proptest::prelude::*;

#[test]
fn files_to_checkpoint_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("train.json");
    let emb_path = dir.path().join("vectors.txt");
    synthetic_corpus(10, 3).save(&corpus_path).unwrap();
    std::fs::write(&emb_path, synthetic_embeddings(8, 2).unwrap().to_text()).unwrap();

    let corpus = load_corpus(&corpus_path).unwrap();
    assert_eq!(corpus, synthetic_corpus(10, 3));
    let table = load_embeddings(&emb_path).unwrap();
    assert_eq!(table.dim(), 8);
    assert_eq!(table.vocab_size(), 40);

    let cfg = ModelConfig::tiny(8, 3);
    let model = Model::new(cfg.clone(), corpus.categories.clone(), table, 4).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let trained = train(model, &corpus, &tc, None, |_| {}).unwrap().model;
    let ckpt = dir.path().join("ckpt");
    save_checkpoint(&trained, &ckpt, tc.seed, &["epochs = 2".into()]).unwrap();

    let (restored, info) = load_checkpoint(&ckpt, Some(&cfg)).unwrap();
    assert_eq!(info.echo, vec!["epochs = 2".to_string()]);
    for s in &corpus.sentences {
        assert_eq!(restored.predict(&s.tokens).unwrap(), trained.predict(&s.tokens).unwrap());
    }
    assert_eq!(evaluate(&restored, &corpus).unwrap(), evaluate(&trained, &corpus).unwrap());
}

#[test]
fn unknown_tokens_use_the_unk_row() {
    let model = Model::new(
        ModelConfig::tiny(8, 3),
        vec!["FOOD".into(), "SERVICE".into(), "AMBIENCE".into()],
        synthetic_embeddings(8, 0).unwrap(),
        0,
    )
    .unwrap();
    let a = model.predict(&["the".into(), "zzz".into()]).unwrap();
    let b = model.predict(&["the".into(), "qqq".into()]).unwrap();
    assert_eq!(a, b);
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    let vocab = vocabulary();
    let sentence = (1usize..10).prop_flat_map(move |n| {
        let vocab = vocab.clone();
        (
            proptest::collection::vec(proptest::sample::select(vocab), n),
            proptest::collection::vec((0..n, 0..3usize, any::<bool>(), 0..2usize), 0..4),
        )
    });
    proptest::collection::vec(sentence, 1..6).prop_map(|raw| {
        let sentences = raw
            .into_iter()
            .enumerate()
            .map(|(i, (tokens, anns))| {
                let n = tokens.len();
                let mut annotations: Vec<Annotation> = Vec::new();
                for (start, len, aspect, category) in anns {
                    let span = (start, (start + len).min(n - 1));
                    let kind = if aspect { TermKind::Aspect } else { TermKind::Opinion };
                    let clash = annotations
                        .iter()
                        .any(|a| a.kind == kind && a.category == category && a.span.0 <= span.1 && span.0 <= a.span.1);
                    if !clash {
                        annotations.push(Annotation { span, kind, category });
                    }
                }
                Sentence {
                    id: format!("p{i}"),
                    tokens: tokens.into_iter().map(String::from).collect(),
                    annotations,
                }
            })
            .collect();
        Corpus {
            categories: vec!["A".into(), "B".into()],
            sentences,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_json_round_trips(corpus in arb_corpus()) {
        corpus.validate().unwrap();
        let text = corpus.to_json_string().unwrap();
        prop_assert_eq!(Corpus::from_json_str(&text).unwrap(), corpus);
    }
}
