//! Training loop, optimizer, dropout and checkpoints.

mod checkpoint;
mod dropout;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo, CHECKPOINT_VERSION};
pub use dropout::Dropout;
pub use optim::RmsProp;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_gold, Corpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::heads::LossReport;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the token loss.
    pub lambda: f64,
    pub dropout: f64,
    pub lr: f64,
    /// RMSprop moving-average coefficient.
    pub rho: f64,
    pub eps: f64,
    pub shuffle: bool,
    /// Multiplies the learning rate after every epoch when set.
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            seed: 0,
            lambda: 1.0,
            dropout: 0.5,
            lr: 0.001,
            rho: 0.9,
            eps: 1e-8,
            shuffle: true,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be a non-negative number, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.lr < 0.0 || !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return Err(Error::Config("lr must be >= 0, rho in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Summed losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossReport,
}

/// CSV with columns `epoch,L_tok,L_sen,L`; the `L_sen` column is dropped when
/// the auxiliary task is off.
pub fn loss_log_csv(log: &[EpochLog], auxiliary: bool) -> String {
    let mut out = String::from(if auxiliary { "epoch,L_tok,L_sen,L\n" } else { "epoch,L_tok,L\n" });
    for e in log {
        let l = &e.loss;
        match (auxiliary, l.sentence) {
            (true, Some(s)) => out.push_str(&format!("{},{},{},{}\n", e.epoch, l.token, s, l.total)),
            _ => out.push_str(&format!("{},{},{}\n", e.epoch, l.token, l.total)),
        }
    }
    out
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Best validation model with its epoch and report, when a validation
    /// corpus was given.
    pub best: Option<(usize, EvalReport, Model)>,
}

/// Per-sentence RMSprop training. `on_epoch` sees every epoch's summed losses.
pub fn train(
    mut model: Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    validation: Option<&Corpus>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.sentences.is_empty() {
        return Err(Error::Corpus("training corpus has no sentences".into()));
    }
    if corpus.categories != model.categories() {
        return Err(Error::Corpus(format!(
            "corpus categories {:?} differ from the model's {:?}",
            corpus.categories,
            model.categories()
        )));
    }
    let c = model.config().categories;
    let auxiliary = model.config().sharing.auxiliary_task;
    let golds: Vec<_> = corpus.sentences.iter().map(|s| encode_gold(s, c)).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(1);
    let mut dropout = Dropout::from_rng(cfg.dropout, mask_rng)?;
    let mut opt = RmsProp::new(cfg.lr, cfg.rho, cfg.eps);
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, EvalReport, Model)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let mut total = LossReport::zero(cfg.lambda, auxiliary);
        for &i in &order {
            let s = &corpus.sentences[i];
            model.params_mut().zero_grad();
            let (fwd, loss) = model.loss_graph(model.params(), &s.tokens, &golds[i], cfg.lambda, Some(&mut dropout))?;
            let report = loss.report(&fwd.graph);
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    sentence: s.id.clone(),
                    epoch,
                });
            }
            fwd.graph.backward(loss.total, model.params_mut())?;
            opt.step(model.params_mut());
            total.add(&report);
        }
        let entry = EpochLog { epoch, loss: total };
        log::debug!("epoch {epoch}: L = {}", total.total);
        on_epoch(&entry);
        log.push(entry);
        if let Some(val) = validation {
            let report = evaluate(&model, val)?;
            if best.as_ref().is_none_or(|(_, b, _)| report.token_f1() > b.token_f1()) {
                best = Some((epoch, report, model.clone()));
            }
        }
        if let Some(decay) = cfg.lr_decay {
            opt.lr *= decay;
        }
    }
    Ok(TrainOutcome { model, log, best })
}

#[cfg(test)]
mod tests;
