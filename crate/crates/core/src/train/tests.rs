use super::*;
use crate::corpus::encode_gold;
use crate::model::ModelConfig;
use crate::synthetic::{synthetic_corpus, synthetic_embeddings};
use tempfile::tempdir;

fn setup(seed: u64) -> (Model, Corpus) {
    let corpus = synthetic_corpus(6, 2);
    let model = Model::new(
        ModelConfig::tiny(8, 3),
        corpus.categories.clone(),
        synthetic_embeddings(8, 1).unwrap(),
        seed,
    )
    .unwrap();
    (model, corpus)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        lr: 0.01,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (model, corpus) = setup(0);
    let before = model.params().clone();
    let cfg = TrainConfig { lr: 0.0, ..quick(1) };
    let out = train(model, &corpus, &cfg, None, |_| {}).unwrap();
    for ((_, a), (_, b)) in before.iter().zip(out.model.params().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn same_seed_same_log() {
    let run = || {
        let (model, corpus) = setup(1);
        train(model, &corpus, &quick(3), None, |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(loss_log_csv(&a.log, true), loss_log_csv(&b.log, true));
    for ((_, x), (_, y)) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn loss_log_columns_follow_auxiliary_switch() {
    let entry = EpochLog {
        epoch: 1,
        loss: LossReport {
            token: 2.0,
            sentence: Some(3.0),
            lambda: 1.0,
            total: 5.0,
        },
    };
    assert_eq!(loss_log_csv(&[entry], true), "epoch,L_tok,L_sen,L\n1,2,3,5\n");
    let no_aux = EpochLog {
        loss: LossReport {
            sentence: None,
            total: 2.0,
            ..entry.loss
        },
        ..entry
    };
    assert_eq!(loss_log_csv(&[no_aux], false), "epoch,L_tok,L\n1,2,2\n");
}

#[test]
fn non_finite_loss_names_sentence_and_epoch() {
    let (mut model, corpus) = setup(2);
    model.params_mut().by_name_mut("head.w_a").unwrap().value.data_mut()[0] = f64::NAN;
    let err = train(model, &corpus, &quick(1), None, |_| {}).err().unwrap();
    match err {
        Error::NonFiniteLoss { sentence, epoch } => {
            assert!(sentence.starts_with("syn-"));
            assert_eq!(epoch, 1);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn full_batch_loss_decreases_for_ten_steps() {
    let (mut model, corpus) = setup(3);
    let golds: Vec<_> = corpus.sentences.iter().map(|s| encode_gold(s, 3)).collect();
    let mut opt = RmsProp::new(0.001, 0.9, 1e-8);
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        model.params_mut().zero_grad();
        let mut total = 0.0;
        for (s, gold) in corpus.sentences.iter().zip(&golds) {
            let (fwd, loss) = model.loss_graph(model.params(), &s.tokens, gold, 1.0, None).unwrap();
            total += fwd.graph.value(loss.total).item();
            fwd.graph.backward(loss.total, model.params_mut()).unwrap();
        }
        assert!(total < last, "{total} >= {last}");
        last = total;
        opt.step(model.params_mut());
    }
}

#[test]
fn validation_tracks_best_epoch() {
    let (model, corpus) = setup(4);
    let out = train(model, &corpus, &quick(2), Some(&corpus), |_| {}).unwrap();
    let (epoch, report, _) = out.best.unwrap();
    assert!((1..=2).contains(&epoch));
    assert!(report.token_f1() >= 0.0);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (model, corpus) = setup(5);
    let dir = tempdir().unwrap();
    save_checkpoint(&model, dir.path(), 5, &["run x".into()]).unwrap();
    let (loaded, info) = load_checkpoint(dir.path(), None).unwrap();
    assert_eq!(info.seed, 5);
    assert_eq!(info.echo, vec!["run x".to_string()]);
    let toks = &corpus.sentences[0].tokens;
    assert_eq!(model.predict(toks).unwrap(), loaded.predict(toks).unwrap());

    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let names: Vec<&str> = manifest
        .lines()
        .filter_map(|l| l.strip_prefix("param "))
        .map(|l| l.split(' ').next().unwrap())
        .collect();
    let unique: std::collections::BTreeSet<&str> = names.iter().copied().collect();
    assert_eq!(names.len(), model.params().len());
    assert_eq!(unique.len(), names.len());

    let again = tempdir().unwrap();
    save_checkpoint(&loaded, again.path(), 5, &["run x".into()]).unwrap();
    for f in ["manifest.txt", "params.bin", "embeddings.txt"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
    }
}

#[test]
fn loading_with_other_dimensions_names_the_parameter() {
    let (model, _) = setup(6);
    let dir = tempdir().unwrap();
    save_checkpoint(&model, dir.path(), 0, &[]).unwrap();
    let mut wrong = model.config().clone();
    wrong.hidden_dim = 5;
    let err = load_checkpoint(dir.path(), Some(&wrong)).err().unwrap();
    assert!(matches!(err, Error::Checkpoint { version: 1, .. }));
    assert!(err.to_string().contains("encoder.w_z"), "{err}");
}

#[test]
fn corrupted_manifest_is_rejected() {
    let (model, _) = setup(7);
    let dir = tempdir().unwrap();
    save_checkpoint(&model, dir.path(), 0, &[]).unwrap();
    let path = dir.path().join("manifest.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("mtmn-checkpoint 1", "mtmn-checkpoint 9", 1)).unwrap();
    assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::Checkpoint { version: 9, .. })));
    std::fs::write(&path, text.lines().filter(|l| !l.starts_with("param head.w_a")).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());
}
