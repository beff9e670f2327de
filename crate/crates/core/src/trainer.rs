//! Mini-batch training with an RMSE objective.
//!
//! Each batch is processed in two sweeps. The first runs every sample forward
//! without recording gradients to obtain the batch RMSE and its derivative
//! with respect to each prediction; the second replays each sample (same
//! dropout stream) on its own tape and backpropagates that derivative. Only
//! one sample's graph per worker is alive at a time, and gradients are summed
//! over fixed-size chunks in sample order, so results do not depend on how
//! many workers an [`Executor`] uses.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, WindowSample};
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::model::DastModel;
use crate::optim::{radam_step, OptimizerKind, OptimizerState};
use crate::params::ParamStore;
use crate::tape::Tape;

/// Samples per gradient-accumulation chunk.
pub const GRAD_CHUNK: usize = 16;

/// Runs independent tasks `0..n` and returns their results in task order.
pub trait Executor: Sync {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs tasks one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub shuffle: bool,
    /// Emit a checkpoint event every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.001,
            dropout: 0.2,
            seed: 0,
            optimizer: OptimizerKind::Radam,
            shuffle: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub best_test_rmse: Option<f64>,
    pub optimizer: OptimizerState,
    /// Base seed; the shuffle and dropout streams are derived from it and the
    /// epoch/batch/sample position.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// RMSE over all training windows in training mode.
    pub train_loss: f64,
    pub test_rmse: Option<f64>,
    pub test_score: Option<f64>,
}

/// Prediction output of [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: EvalResult,
    /// Clipped predictions, one per sample.
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

/// SplitMix64 finaliser; combines seeds into independent stream ids.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, epoch: usize, batch: usize, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed, epoch as u64 + 1), batch as u64 + 1), slot as u64 + 1))
}

/// Batch RMSE and the per-prediction derivative of the loss.
pub fn rmse_with_grad(preds: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = crate::metrics::rmse(preds, labels)?;
    let n = preds.len() as f64;
    let grads = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| if loss > 0.0 { (p - y) / (n * loss) } else { 0.0 })
        .collect();
    Ok((loss, grads))
}

/// Stateful driver for repeated epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    state: TrainState,
    best: Option<ParamStore>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &mut DastModel) -> Result<Self> {
        config.validate()?;
        model.set_dropout(config.dropout)?;
        let optimizer = OptimizerState::new(config.optimizer, config.learning_rate, model.params().params());
        let state = TrainState {
            epoch: 0,
            best_test_rmse: None,
            optimizer,
            seed: config.seed,
        };
        Ok(Self {
            config,
            state,
            best: None,
        })
    }

    /// Continues from a saved state; the model must hold the matching weights.
    pub fn resume(config: TrainConfig, model: &mut DastModel, state: TrainState) -> Result<Self> {
        config.validate()?;
        model.set_dropout(config.dropout)?;
        if state.optimizer.first_moment.len() != model.params().len() {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        Ok(Self {
            config,
            state,
            best: None,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Parameters of the epoch with the lowest test RMSE seen by this trainer.
    pub fn best_params(&self) -> Option<&ParamStore> {
        self.best.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// One optimisation step on `batch`; returns the batch loss.
    pub fn step<E: Executor>(
        &mut self,
        model: &mut DastModel,
        batch: &[&WindowSample],
        batch_index: usize,
        exec: &E,
    ) -> Result<f64> {
        let epoch = self.state.epoch;
        let seed = self.state.seed;
        let frozen: &DastModel = model;
        // d RMSE / d p_i = (p_i - y_i) / (n L): each sample backpropagates
        // its residual and the common 1 / (n L) is applied once L is known.
        let chunks = batch.len().div_ceil(GRAD_CHUNK);
        let partials = exec.run(chunks, |c| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            let mut acc: Vec<Vec<f64>> = frozen
                .params()
                .params()
                .iter()
                .map(|p| vec![0.0; p.value.numel()])
                .collect();
            let mut preds = Vec::with_capacity(GRAD_CHUNK);
            let mut tape = Tape::new();
            let first = c * GRAD_CHUNK;
            let end = (first + GRAD_CHUNK).min(batch.len());
            for (i, sample) in batch.iter().enumerate().take(end).skip(first) {
                tape.clear();
                let mut rng = sample_rng(seed, epoch, batch_index, i);
                let mut pass = frozen.begin_pass(&mut tape, true, true, &mut rng, false);
                let out = frozen.forward(&mut pass, &sample.matrix)?;
                let binding = pass.binding;
                let pred = tape.value(out).data()[0];
                preds.push(pred);
                let residual = pred - sample.label;
                if residual == 0.0 || !residual.is_finite() {
                    continue;
                }
                tape.backward_with_seed(out, &[residual])?;
                for (a, &v) in acc.iter_mut().zip(binding.vars()) {
                    if let Some(g) = tape.grad(v) {
                        a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Ok((preds, acc))
        });
        let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
        let preds: Vec<f64> = partials.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let labels: Vec<f64> = batch.iter().map(|s| s.label).collect();
        let loss = crate::metrics::rmse(&preds, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss at epoch {} batch {batch_index}",
                epoch + 1
            )));
        }

        let store = model.params_mut();
        store.zero_grads();
        if loss > 0.0 {
            let scale = 1.0 / (batch.len() as f64 * loss);
            for (_, partial) in &partials {
                for (p, g) in store.params_mut().iter_mut().zip(partial) {
                    p.grad.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            for p in store.params_mut() {
                p.grad.iter_mut().for_each(|x| *x *= scale);
            }
        }
        radam_step(store.params_mut(), &mut self.state.optimizer)?;
        store.zero_grads();
        Ok(loss)
    }

    /// Runs one epoch over `data.train` and scores `data.test`.
    pub fn run_epoch<E: Executor>(
        &mut self,
        model: &mut DastModel,
        data: &DatasetSplit,
        exec: &E,
    ) -> Result<EpochRecord> {
        if data.train.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        if self.config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.state.seed, self.state.epoch as u64 + 1));
            order.shuffle(&mut rng);
        }
        let mut sq_sum = 0.0;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let loss = self.step(model, &batch, b, exec)?;
            sq_sum += loss * loss * batch.len() as f64;
        }
        self.state.epoch += 1;
        let train_loss = libm::sqrt(sq_sum / data.train.len() as f64);

        let (test_rmse, test_score) = if data.test.is_empty() {
            (None, None)
        } else {
            let eval = evaluate(model, &data.test, exec)?;
            if self.state.best_test_rmse.is_none_or(|b| eval.metrics.rmse < b) {
                self.state.best_test_rmse = Some(eval.metrics.rmse);
                self.best = Some(model.params().clone());
            }
            (Some(eval.metrics.rmse), Some(eval.metrics.score))
        };
        Ok(EpochRecord {
            epoch: self.state.epoch,
            train_loss,
            test_rmse,
            test_score,
        })
    }
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each.
pub fn train<E: Executor>(
    model: &mut DastModel,
    data: &DatasetSplit,
    config: &TrainConfig,
    exec: &E,
    mut on_epoch: impl FnMut(&EpochRecord, &DastModel, &Trainer) -> Result<()>,
) -> Result<(Vec<EpochRecord>, Trainer)> {
    let mut trainer = Trainer::new(config.clone(), model)?;
    let mut history = Vec::with_capacity(config.epochs);
    while !trainer.is_finished() {
        let rec = trainer.run_epoch(model, data, exec)?;
        on_epoch(&rec, model, &trainer)?;
        history.push(rec);
    }
    Ok((history, trainer))
}

/// Eval-mode predictions, clipped at zero, and their metrics.
pub fn evaluate<E: Executor>(model: &DastModel, samples: &[WindowSample], exec: &E) -> Result<Evaluation> {
    let predictions = exec
        .run(samples.len(), |i| model.predict(&samples[i].matrix).map(|p| p.max(0.0)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        metrics: EvalResult::compute(&predictions, &labels)?,
        predictions,
        labels,
    })
}
