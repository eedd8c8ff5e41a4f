//! Mini-batch Adam training with early stopping on validation loss.

use std::thread;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::config::KvConfig;
use crate::data::{SampleSet, TrainingSample};
use crate::error::{Error, Result};
use crate::model::Stdn;
use crate::nn::{AdamConfig, AdamState, GradBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_threshold: f64,
    /// Worker threads per batch; 1 is sequential.
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            eval_threshold: 10.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.threads == 0 {
            return Err(Error::config("batch_size, patience and threads must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, cfg: &KvConfig) -> Result<()> {
        self.batch_size = cfg.get_or("batch_size", self.batch_size)?;
        self.learning_rate = cfg.get_or("learning_rate", self.learning_rate)?;
        self.max_epochs = cfg.get_or("max_epochs", self.max_epochs)?;
        self.patience = cfg.get_or("patience", self.patience)?;
        self.seed = cfg.get_or("seed", self.seed)?;
        self.eval_threshold = cfg.get_or("eval_threshold", self.eval_threshold)?;
        self.threads = cfg.get_or("threads", self.threads)?;
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// What to do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model holding the parameters of the best epoch.
    pub model: Stdn,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Seed for the dropout masks of one sample, independent of thread layout.
fn sample_seed(run_seed: u64, epoch: usize, position: usize) -> u64 {
    let mut x = run_seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1);
    x = x.wrapping_add((position as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    x ^= x >> 31;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 29)
}

/// Summed loss and gradients over `indices`, split across `threads`
/// workers. Partial sums are combined in chunk order.
fn batch_gradients(
    model: &Stdn,
    set: &SampleSet,
    indices: &[(usize, usize)],
    seed: u64,
    epoch: usize,
    threads: usize,
) -> Result<(f64, GradBuffer)> {
    let work = |chunk: &[(usize, usize)]| -> Result<(f64, GradBuffer)> {
        let mut total = GradBuffer::zeros_like(model.params());
        let mut loss = 0.0;
        for &(position, k) in chunk {
            let sample = set.sample(k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, position));
            let (l, g) = model.loss_and_grad(&sample, Some(&mut rng))?;
            loss += l;
            total.add_assign(&g)?;
        }
        Ok((loss, total))
    };
    if threads <= 1 || indices.len() < 2 {
        return work(indices);
    }
    let size = indices.len().div_ceil(threads);
    let parts: Vec<Result<(f64, GradBuffer)>> = thread::scope(|s| {
        let handles: Vec<_> = indices.chunks(size).map(|c| s.spawn(move || work(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("worker thread panicked".into()))))
            .collect()
    });
    let mut loss = 0.0;
    let mut total = GradBuffer::zeros_like(model.params());
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g)?;
    }
    Ok((loss, total))
}

/// Predictions in normalized units for `indices`, in order.
pub fn predict_all(model: &Stdn, set: &SampleSet, indices: &[usize], threads: usize) -> Result<Vec<[f64; 2]>> {
    let work = |chunk: &[usize]| -> Result<Vec<[f64; 2]>> {
        chunk
            .iter()
            .map(|&k| Ok(model.predict_normalized(&set.sample(k)?)?.0))
            .collect()
    };
    if threads <= 1 || indices.len() < 2 {
        return work(indices);
    }
    let size = indices.len().div_ceil(threads);
    let parts: Vec<Result<Vec<[f64; 2]>>> = thread::scope(|s| {
        let handles: Vec<_> = indices.chunks(size).map(|c| s.spawn(move || work(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("worker thread panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(indices.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean inference-mode loss over `indices`.
pub fn mean_loss(model: &Stdn, set: &SampleSet, indices: &[usize], threads: usize) -> Result<f64> {
    let preds = predict_all(model, set, indices, threads)?;
    let lambda = model.config().lambda;
    let sum: f64 = preds
        .iter()
        .zip(indices)
        .map(|(p, &k)| crate::model::loss(*p, set.entries[k].target, lambda))
        .sum();
    Ok(sum / indices.len().max(1) as f64)
}

/// Train `model` on `train_idx` of `set`, selecting parameters by the loss
/// on `val_idx` (or by training loss when no validation samples exist).
pub fn train(
    model: Stdn,
    set: &SampleSet,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_idx.is_empty() && config.max_epochs > 0 {
        return Err(Error::data("training set is empty"));
    }
    let mut model = model;
    let mut best = model.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = Vec::new();
    let mut best_epoch = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let base = b * config.batch_size;
            let tagged: Vec<(usize, usize)> = chunk.iter().enumerate().map(|(o, &k)| (base + o, k)).collect();
            let (loss, mut grads) = batch_gradients(&model, set, &tagged, config.seed, epoch, config.threads)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            grads.scale(1.0 / chunk.len() as f64);
            model.params_mut().set_grads(&grads)?;
            adam.step(model.params_mut());
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            let v = mean_loss(&model, set, val_idx, config.threads)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
            }
            Some(v)
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        match stopper.observe(val_loss.unwrap_or(train_loss)) {
            StopDecision::Improved => {
                best = model.clone();
                best_epoch = Some(epoch);
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                info!("early stop after epoch {epoch}; best epoch {best_epoch:?}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Score `model` on `indices` after denormalizing predictions.
pub fn evaluate(model: &Stdn, set: &SampleSet, indices: &[usize], threshold: f64, threads: usize) -> Result<Metrics> {
    let preds = predict_all(model, set, indices, threads)?;
    let norm = &set.normalizer;
    let raw: Vec<[f64; 2]> = preds
        .iter()
        .map(|p| [norm.denormalize_volume(p[0]), norm.denormalize_volume(p[1])])
        .collect();
    let truths: Vec<[f64; 2]> = indices.iter().map(|&k| set.entries[k].target_raw).collect();
    Ok(Metrics::compute(&raw, &truths, threshold))
}

/// Materialize samples, e.g. for inspection or custom loops.
pub fn materialize(set: &SampleSet, indices: &[usize]) -> Result<Vec<TrainingSample>> {
    indices.iter().map(|&k| set.sample(k)).collect()
}
