//! Adam/MSE training with random fixed-length crops and best-validation
//! model selection.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::metrics;
use crate::audio::{SeedContext, SeedStream};
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, NormStats};
use crate::model::{Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, Graph, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Crop length in frames (250 frames = 4 s of spectral frames).
    pub crop_frames: usize,
    pub adam: AdamConfig,
    /// Utterances per eval-mode forward pass during validation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            crop_frames: 250,
            adam: AdamConfig::default(),
            eval_batch: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.crop_frames == 0 || self.eval_batch == 0 {
            return Err(Error::Config(format!(
                "epochs, crop_frames and eval_batch must be positive and batch_size >= 2: {self:?}"
            )));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// One Adam step per call on a model with its optimiser state.
pub struct Trainer {
    pub model: Model<f32>,
    opt: Adam<f32>,
    dropout: SeedStream,
    steps: u64,
}

impl Trainer {
    pub fn new(model: Model<f32>, adam: AdamConfig, ctx: &SeedContext) -> Self {
        let opt = Adam::new(model.store(), adam);
        Self {
            model,
            opt,
            dropout: ctx.child("dropout").stream(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Train-mode MSE of the batch before the update.
    pub fn step(&mut self, items: &[(&FeatureTensor, Range<usize>)], targets: &[f64]) -> Result<f64> {
        let batch = self.model.batch_ranges(items)?;
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &batch, Mode::Train, &mut self.dropout)?;
        let t: Vec<f32> = targets.iter().map(|&v| v as f32).collect();
        let loss_var = g.mse(out.prediction, &t)?;
        let loss = g.value(loss_var).data()[0] as f64;
        g.backward(loss_var)?;
        let grads = g.param_grads(self.model.store());
        if let Some(bad) = grads.iter().position(|gr| gr.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!(
                "gradient of `{}`",
                self.model.store().iter().nth(bad).map_or("?", |(_, p)| p.name.as_str())
            )));
        }
        self.opt.step(self.model.store_mut(), &grads)?;
        for s in &out.bn_stats {
            s.apply(self.model.store_mut());
        }
        self.steps += 1;
        Ok(loss)
    }
}

/// Eval-mode predictions over full-length utterances.
pub fn predict_all(model: &Model<f32>, examples: &[&Example], chunk: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for c in examples.chunks(chunk.max(1)) {
        let feats: Vec<&FeatureTensor> = c.iter().map(|e| &e.features).collect();
        out.extend(model.predict_batch(&feats)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation MSE.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_val_mse(&self) -> f64 {
        self.val_mse.last().copied().unwrap_or(f64::NAN)
    }
}

/// Split a shuffled index list into batches, folding a trailing singleton
/// into the previous batch (train-mode batch norm needs two utterances).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        out[n - 1] = &order[(n - 1) * size..];
    }
    out
}

fn crop<R: Rng + ?Sized>(frames: usize, len: usize, rng: &mut R) -> Range<usize> {
    if frames <= len {
        0..frames
    } else {
        let start = rng.random_range(0..=frames - len);
        start..start + len
    }
}

/// Train one model on `train`, selecting the epoch with the best validation
/// MSE. Feature normalisation is fitted on the training set only.
pub fn train_model(
    config: &ModelConfig,
    train: &[&Example],
    val: &[&Example],
    tc: &TrainConfig,
    ctx: &SeedContext,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Argument(format!(
            "training needs at least 2 training and 1 validation utterances, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let mut model = Model::<f32>::new(config.clone())?;
    model.set_normalization(&NormStats::fit(train.iter().map(|e| &e.features))?)?;
    let mut trainer = Trainer::new(model, tc.adam, ctx);
    let val_truth: Vec<f64> = val.iter().map(|e| e.stoi).collect();
    let mut best: Option<(usize, f64, Model<f32>)> = None;
    let (mut train_loss, mut val_mse) = (Vec::new(), Vec::new());
    for epoch in 0..tc.epochs {
        let mut rng = ctx.child(&format!("epoch{epoch}")).stream();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for (step, b) in batches(&order, tc.batch_size).into_iter().enumerate() {
            let items: Vec<_> = b
                .iter()
                .map(|&i| {
                    (
                        &train[i].features,
                        crop(train[i].features.frames(), tc.crop_frames, &mut rng),
                    )
                })
                .collect();
            let targets: Vec<f64> = b.iter().map(|&i| train[i].stoi).collect();
            let loss = trainer.step(&items, &targets).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged(format!(
                    "non-finite {what} at epoch {epoch} step {step}; batch: {}",
                    b.iter()
                        .map(|&i| train[i].noisy.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch} step {step}")));
            }
            sum += loss * b.len() as f64;
            n += b.len();
        }
        train_loss.push(sum / n as f64);
        let pred = predict_all(&trainer.model, val, tc.eval_batch)?;
        let v = metrics::mse(&val_truth, &pred)?;
        log::debug!("epoch {epoch}: train {:.5} val {v:.5}", sum / n as f64);
        val_mse.push(v);
        if best.as_ref().is_none_or(|(_, b, _)| v < *b) {
            best = Some((epoch, v, trainer.model.clone()));
        }
    }
    let (best_epoch, best_val_mse, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_mse,
        train_loss,
        val_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order[..1], 4).len(), 1);
        assert_eq!(batches(&order[..6], 3).len(), 2);
    }
}
