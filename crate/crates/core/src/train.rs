//! Mini-batch training with cyclical KL annealing and early stopping on
//! the validation loss.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::{Cvae, ForwardMode, LossBreakdown};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::preprocess::EncodedTrace;

/// Linear cyclical schedule for the KL weight β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub n_cycles: usize,
    /// Fraction of every cycle spent ramping β from 0 to 1.
    pub ramp_ratio: f64,
    pub total_steps: usize,
}

impl AnnealingSchedule {
    pub fn new(n_cycles: usize, ramp_ratio: f64, total_steps: usize) -> Result<Self> {
        let s = AnnealingSchedule {
            n_cycles,
            ramp_ratio,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 {
            return Err(Error::Validation("annealing needs at least one cycle".into()));
        }
        if !(self.ramp_ratio > 0.0 && self.ramp_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "ramp ratio {} not in (0, 1]",
                self.ramp_ratio
            )));
        }
        Ok(())
    }

    pub fn cycle_len(&self) -> f64 {
        self.total_steps as f64 / self.n_cycles as f64
    }
}

/// β at optimizer step `step`; 1 once the planned steps are used up.
pub fn annealing_beta(step: usize, sched: &AnnealingSchedule) -> f64 {
    if step >= sched.total_steps {
        return 1.0;
    }
    let len = sched.cycle_len();
    let progress = (step as f64 % len) / len;
    (progress / sched.ramp_ratio).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a new best validation loss tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub n_cycles: usize,
    pub ramp_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 256,
            patience: 100,
            max_epochs: 1000,
            seed: 0,
            clip_norm: Some(5.0),
            n_cycles: 8,
            ramp_ratio: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Validation(
                "batch size, patience and max epochs must be positive".into(),
            ));
        }
        if matches!(self.clip_norm, Some(c) if !c.is_finite() || c <= 0.0) {
            return Err(Error::Validation("clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    /// Schedule spreading the cycles over the whole planned budget.
    pub fn schedule(&self, n_train: usize) -> Result<AnnealingSchedule> {
        AnnealingSchedule::new(
            self.n_cycles,
            self.ramp_ratio,
            self.max_epochs * self.steps_per_epoch(n_train),
        )
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub activity: f64,
    pub interarrival: f64,
    pub cat_attrs: f64,
    pub num_attrs: f64,
    pub kl: f64,
    pub train_loss: f64,
    pub beta_min: f64,
    pub beta_mean: f64,
    pub beta_max: f64,
    pub grad_norm: f64,
    pub val_loss: f64,
    pub best: bool,
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Patience rule: stop once `patience` epochs in a row have failed to
/// improve on the best loss seen so far, and the epoch after that ends.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Mean validation loss at β = 1, without dropout and with `z = μ`.
pub fn validate(model: &Cvae, val: &[EncodedTrace], batch_size: usize) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Empty("validation set is empty".into()));
    }
    let refs: Vec<&EncodedTrace> = val.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let (l, _) = model.batch_loss(chunk, 1.0, &mut ForwardMode::deterministic(), false)?;
        total += l.total * chunk.len() as f64;
    }
    Ok(total / val.len() as f64)
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Cvae,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Parameters after the final epoch, for resuming.
    pub last_params: ParamStore,
    pub last_epoch: usize,
}

/// Where a resumed run picks up.
#[derive(Clone, Debug, Default)]
pub struct Resume {
    /// Epochs already trained; numbering continues after this.
    pub completed_epochs: usize,
    /// Best validation loss of the earlier run, if known.
    pub best_val_loss: Option<f64>,
}

/// Trains `model` and returns the best-validation snapshot.
///
/// `on_epoch` sees every history row as soon as it is recorded.
pub fn train(
    model: Cvae,
    train_set: &[EncodedTrace],
    val_set: &[EncodedTrace],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    resume_training(model, train_set, val_set, cfg, &Resume::default(), on_epoch)
}

/// Continues training from already trained parameters. Epochs are numbered
/// from `completed_epochs + 1` up to `cfg.max_epochs`, the annealing
/// schedule resumes at the matching step, and the optimizer moments start
/// from zero.
pub fn resume_training(
    mut model: Cvae,
    train_set: &[EncodedTrace],
    val_set: &[EncodedTrace],
    cfg: &TrainConfig,
    resume: &Resume,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if resume.completed_epochs >= cfg.max_epochs {
        return Err(Error::Validation(format!(
            "already trained {} of {} epochs",
            resume.completed_epochs, cfg.max_epochs
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set is empty".into()));
    }
    let sched = cfg.schedule(train_set.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(resume.completed_epochs as u64);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut stopper = EarlyStopping::new(cfg.patience);
    if let Some(best) = resume.best_val_loss {
        stopper.update(resume.completed_epochs, best);
    }
    let mut best_params = model.params.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = resume.completed_epochs * cfg.steps_per_epoch(train_set.len());
    let mut stopped_early = false;

    for epoch in resume.completed_epochs + 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        let (mut beta_min, mut beta_max, mut beta_sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let mut grad_norm_sum = 0.0;
        let n_batches = cfg.steps_per_epoch(train_set.len());
        for (batch_id, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedTrace> = idx.iter().map(|&i| &train_set[i]).collect();
            let beta = annealing_beta(step, &sched);
            step += 1;
            let mut mode = ForwardMode { rng: Some(&mut rng) };
            let (loss, grads) = model.batch_loss(&batch, beta, &mut mode, true)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss in epoch {epoch}, batch {batch_id}: {loss:?}"
                )));
            }
            grad_norm_sum += adam.step(&mut model.params, &grads.expect("requested gradients"));
            beta_min = beta_min.min(beta);
            beta_max = beta_max.max(beta);
            beta_sum += beta;
            parts.extend(std::iter::repeat_n(loss, batch.len()));
        }
        if !model.params.all_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        let mean = LossBreakdown::mean(&parts);
        let val_loss = validate(&model, val_set, cfg.batch_size)?;
        let decision = stopper.update(epoch, val_loss);
        if decision == StopDecision::Improved {
            best_params = model.params.clone();
        }
        let record = EpochRecord {
            epoch,
            activity: mean.activity,
            interarrival: mean.interarrival,
            cat_attrs: mean.cat_attrs,
            num_attrs: mean.num_attrs,
            kl: mean.kl,
            train_loss: parts.iter().map(|p| p.total).sum::<f64>() / parts.len() as f64,
            beta_min,
            beta_mean: beta_sum / n_batches as f64,
            beta_max,
            grad_norm: grad_norm_sum / n_batches as f64,
            val_loss,
            best: decision == StopDecision::Improved,
        };
        debug!("epoch {epoch}: {record:?}");
        on_epoch(&record);
        history.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    let last_epoch = history.last().map_or(resume.completed_epochs, |r| r.epoch);
    let last_params = std::mem::replace(&mut model.params, best_params);
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_loss,
        history,
        stopped_early,
        last_params,
        last_epoch,
    })
}

/// Writes one history row per line as it arrives (header first).
pub struct HistoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(w: W) -> Self {
        HistoryWriter {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        self.inner.serialize(r)?;
        self.inner.flush()?;
        Ok(())
    }
}
