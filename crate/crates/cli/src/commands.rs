use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::{info, warn};
use mtmn::autodiff::{finite_diff_check, GradCheckOptions};
use mtmn::corpus::encode_gold;
use mtmn::decoder::tag_sentence;
use mtmn::eval::GoldOracle;
use mtmn::inspect::{attention_dump, category_legend};
use mtmn::synthetic::{synthetic_corpus, synthetic_embeddings};
use mtmn::train::{load_checkpoint, loss_log_csv, save_checkpoint};
use mtmn::{evaluate, load_corpus, load_embeddings, Corpus, EvalReport, Model, TensorSharing};
use serde_json::json;

use crate::config::{parse_m_list, RunArgs, RunConfig};
use crate::{EvalArgs, Failure, GradcheckArgs, InspectArgs, SweepArgs, TagArgs};

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve(args: &RunArgs, base: RunConfig) -> Result<RunConfig, Failure> {
    args.resolve(base).map_err(Failure::Usage)
}

/// The path behind `--{flag}`, which must be given and exist.
fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    let path = path.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))?;
    if !path.exists() {
        return Err(usage(format!("--{flag}: {} does not exist", path.display())));
    }
    Ok(path)
}

fn echo_lines(cfg: &RunConfig) -> Vec<String> {
    cfg.to_ini().lines().filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Writes `text` to `out/name`, or to stdout without an output directory.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, text)?;
            info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn write_report(dir: &Path, stem: &str, cfg: &RunConfig, report: &EvalReport) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.txt")), cfg.comment_header() + &report.to_text())?;
    let json = json!({ "config": cfg.to_json(), "report": report });
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(())
}

fn model_for(cfg: &RunConfig, corpus: &Corpus, embeddings: &Path) -> Result<Model, Failure> {
    let table = load_embeddings(embeddings)?;
    let model_cfg = cfg.model_config(table.dim(), corpus.num_categories()).map_err(usage)?;
    Ok(Model::new(model_cfg, corpus.categories.clone(), table, cfg.train.seed)?)
}

pub fn train(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args, RunConfig::default())?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let embeddings = required(&cfg.embeddings, "embeddings")?;
    let out = cfg.out.clone().ok_or_else(|| usage("--out is required"))?;
    let validation = match &cfg.validation {
        Some(_) => Some(load_corpus(required(&cfg.validation, "validation")?)?),
        None => None,
    };
    let model = model_for(&cfg, &corpus, embeddings)?;
    let auxiliary = model.config().sharing.auxiliary_task;
    info!(
        "{} sentences, {} categories, {} trainable parameters, sharing {}",
        corpus.sentences.len(),
        corpus.num_categories(),
        model.params().scalar_count(),
        model.config().sharing.label()
    );
    let outcome = mtmn::train(model, &corpus, &cfg.train, validation.as_ref(), |e| {
        info!("epoch {}: L_tok {:.4}, L {:.4}", e.epoch, e.loss.token, e.loss.total)
    })?;

    let echo = echo_lines(&cfg);
    fs::create_dir_all(&out)?;
    save_checkpoint(&outcome.model, &out.join("checkpoint"), cfg.train.seed, &echo)?;
    fs::write(out.join("loss.csv"), cfg.comment_header() + &loss_log_csv(&outcome.log, auxiliary))?;
    fs::write(out.join("config.ini"), cfg.to_ini())?;
    if let Some((epoch, report, best)) = outcome.best {
        save_checkpoint(&best, &out.join("best"), cfg.train.seed, &echo)?;
        write_report(&out, "best_eval", &cfg, &report)?;
        info!("best validation token F1 {:.4} at epoch {epoch}", report.token_f1());
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.run, RunConfig::default())?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let report = if args.gold_oracle {
        evaluate(
            &GoldOracle {
                categories: corpus.categories.clone(),
            },
            &corpus,
        )?
    } else {
        let (model, _) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?, None)?;
        evaluate(&model, &corpus)?
    };
    if let Some(out) = &cfg.out {
        write_report(out, "eval", &cfg, &report)?;
    }
    print!("{}", cfg.comment_header() + &report.to_text());
    Ok(())
}

pub fn tag(args: &TagArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.run, RunConfig::default())?;
    let (model, _) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?, None)?;
    let input = required(&args.input, "input")?;
    let text = fs::read_to_string(input)?;
    let mut tagged = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            continue;
        }
        let spans = model.decode(&tokens)?;
        tagged.push(tag_sentence(&format!("line-{}", i + 1), &tokens, &spans, model.categories()));
    }
    let json = json!({ "config": cfg.to_json(), "sentences": tagged });
    emit(cfg.out.as_deref(), "tags.json", &(serde_json::to_string_pretty(&json)? + "\n"))
}

pub fn inspect_attention(args: &InspectArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.run, RunConfig::default())?;
    let (model, _) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?, None)?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    for id in &args.sentences {
        if !corpus.sentences.iter().any(|s| &s.id == id) {
            return Err(usage(format!("--sentence: no sentence with id {id:?}")));
        }
    }
    let selected = corpus
        .sentences
        .iter()
        .filter(|s| args.sentences.is_empty() || args.sentences.contains(&s.id))
        .take(args.limit.unwrap_or(usize::MAX));
    let mut text = cfg.comment_header();
    text.push_str(&category_legend(model.categories()));
    for s in selected {
        text.push('\n');
        text.push_str(&attention_dump(&model, s)?);
    }
    emit(cfg.out.as_deref(), "attention.txt", &text)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let tiny = mtmn::ModelConfig::tiny(args.embed_dim, 3);
    let base = RunConfig {
        hidden_dim: tiny.hidden_dim,
        k_interactions: tiny.interactions,
        factor_rank: tiny.factor_rank,
        layers: tiny.layers,
        ..RunConfig::default()
    };
    let cfg = resolve(&args.run, base)?;
    let (corpus, table) = match (&cfg.corpus, &cfg.embeddings) {
        (Some(_), Some(_)) => (
            load_corpus(required(&cfg.corpus, "corpus")?)?,
            load_embeddings(required(&cfg.embeddings, "embeddings")?)?,
        ),
        (None, None) => (synthetic_corpus(8, cfg.train.seed), synthetic_embeddings(args.embed_dim, cfg.train.seed)?),
        _ => return Err(usage("--corpus and --embeddings must be given together")),
    };
    let sentence = corpus
        .sentences
        .iter()
        .find(|s| s.len() == 5)
        .or_else(|| corpus.sentences.first())
        .ok_or_else(|| usage("corpus has no sentences"))?;
    let model_cfg = cfg.model_config(table.dim(), corpus.num_categories()).map_err(usage)?;
    let model = Model::new(model_cfg, corpus.categories.clone(), table, cfg.train.seed)?;
    if let Some(name) = &args.corrupt_gradient {
        if model.params().by_name(name).is_none() {
            return Err(usage(format!("--corrupt-gradient: no parameter named {name:?}")));
        }
    }
    let gold = encode_gold(sentence, corpus.num_categories());
    let opts = GradCheckOptions {
        max_per_param: args.max_per_param,
        seed: cfg.train.seed,
        corrupt: args.corrupt_gradient.clone(),
        ..GradCheckOptions::default()
    };
    let mut store = model.params().clone();
    let report = finite_diff_check(
        &mut store,
        |st| {
            let (fwd, loss) = model.loss_graph(st, &sentence.tokens, &gold, cfg.train.lambda, None)?;
            Ok((fwd.graph, loss.total))
        },
        &opts,
    )?;

    let mut text = cfg.comment_header();
    text.push_str(&format!("sentence {} ({} tokens)\n", sentence.id, sentence.len()));
    text.push_str(&format!(
        "checked {} scalars in {} parameters; max relative error {:.3e} (tolerance {:e}, absolute floor {:e})\n",
        report.scalars_checked(),
        report.entries.len(),
        report.max_rel_error(),
        opts.rel_tol,
        opts.abs_floor
    ));
    text.push_str("worst parameters:\n");
    for e in report.worst(10) {
        text.push_str(&format!(
            "  {:<28} n={:<5} rel={:.3e} abs={:.3e} analytic={:+.6e} numeric={:+.6e} {}\n",
            e.name,
            e.checked,
            e.max_rel_error,
            e.max_abs_error,
            e.analytic,
            e.numeric,
            if e.passed { "ok" } else { "FAIL" }
        ));
    }
    text.push_str(if report.passed() { "result: PASS\n" } else { "result: FAIL\n" });
    emit(cfg.out.as_deref(), "gradcheck.txt", &text)?;
    if report.passed() {
        Ok(())
    } else {
        let worst = report.worst(1).first().map(|e| e.name.clone()).unwrap_or_default();
        Err(Failure::Runtime(anyhow!("gradient check failed; worst parameter {worst}")))
    }
}

pub fn sweep_m(args: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&args.run, RunConfig::default())?;
    if let Some(list) = &args.m_list {
        cfg.m_list = parse_m_list(list).map_err(usage)?;
    }
    if cfg.m_list.is_empty() {
        return Err(usage("--m-list is required"));
    }
    if cfg.sharing().map_err(usage)?.tensor_sharing != TensorSharing::Factored {
        return Err(usage("sweep-m varies the factor rank and needs factored tensor sharing"));
    }
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let embeddings = required(&cfg.embeddings, "embeddings")?;
    let validation = match &cfg.validation {
        Some(_) => Some(load_corpus(required(&cfg.validation, "validation")?)?),
        None => None,
    };
    let scored = validation.as_ref().unwrap_or(&corpus);
    let c = corpus.num_categories();

    let mut csv = cfg.comment_header();
    csv.push_str("m,asc_f1,opc_f1,as_f1,op_f1,token_f1,note\n");
    for &m in &cfg.m_list {
        let run = RunConfig {
            factor_rank: m,
            ..cfg.clone()
        };
        let note = if m >= c {
            warn!("m = {m} is not smaller than the {c} categories");
            "m>=C"
        } else {
            ""
        };
        let model = model_for(&run, &corpus, embeddings)?;
        let trained = mtmn::train(model, &corpus, &run.train, None, |_| {})?.model;
        let r = evaluate(&trained, scored)?;
        info!("m = {m}: token F1 {:.4}", r.token_f1());
        csv.push_str(&format!(
            "{m},{:.6},{:.6},{:.6},{:.6},{:.6},{note}\n",
            r.asc.f1,
            r.opc.f1,
            r.as_.f1,
            r.op.f1,
            r.token_f1()
        ));
    }
    emit(cfg.out.as_deref(), "sweep_m.csv", &csv)
}
