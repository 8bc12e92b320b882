//! Mean-squared-error training with Adam and best-on-validation selection.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, WindowedSample};
use crate::transformer::{ModelConfig, TransformerForecaster};
use crate::{Error, Gradients, ParamSet, Result, Tensor};

pub fn mse_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Contract(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l) * (p - l))
        .sum();
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    /// Zero moments mirroring `params`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: ParamSet = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam expects {} parameters, got {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.clone()))?;
        let m = state
            .m
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.clone()))?;
        for t in [g, m, &state.v[name]] {
            if t.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: t.shape(),
                });
            }
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).unwrap().data_mut();
        let v = state.v.get_mut(name).unwrap().data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPlan {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub shuffle_seed: u64,
    pub deterministic: bool,
    pub adam: AdamConfig,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 4500,
            shuffle_seed: 0,
            deterministic: true,
            adam: AdamConfig::default(),
        }
    }
}

/// Weights plus enough state to resume or transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adam: Option<AdamState>,
    pub best_val_mse: f64,
    /// Epoch that produced these weights; 0 for the initial weights.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn model(&self) -> Result<TransformerForecaster> {
        TransformerForecaster::from_params(self.config.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the pre-update batch losses.
    pub train_mse: f64,
    pub val_mse: f64,
    pub steps: u64,
}

/// Computes the batch-mean loss and gradient. Implementations may shard the
/// batch; the result must be the mean over all samples.
pub trait GradientBackend {
    fn loss_and_grad(
        &self,
        model: &TransformerForecaster,
        batch: &[&WindowedSample],
    ) -> Result<(f64, Gradients)>;
}

/// Whole batch on one tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialBackend;

impl GradientBackend for SerialBackend {
    fn loss_and_grad(
        &self,
        model: &TransformerForecaster,
        batch: &[&WindowedSample],
    ) -> Result<(f64, Gradients)> {
        model.loss_and_grad(batch.iter().copied())
    }
}

/// Hooks for logging and persistence.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called with the initial weights and again whenever validation MSE
    /// improves.
    fn on_improvement(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best: Checkpoint,
    /// Validation MSE of the starting weights.
    pub initial_val_mse: f64,
    pub trace: Vec<EpochRecord>,
    /// Weights after the final epoch, with their optimizer state.
    pub last: Checkpoint,
}

/// Chunk size for inference-only passes.
const EVAL_CHUNK: usize = 256;

/// Mean squared error of `model` over `samples`.
pub fn evaluate_mse(model: &TransformerForecaster, samples: &[WindowedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let preds = model.predict_samples(chunk)?;
        for (p, s) in preds.iter().zip(chunk) {
            total += (p - s.y) * (p - s.y);
        }
    }
    Ok(total / samples.len() as f64)
}

/// Trains from the given weights with fresh Adam moments.
pub fn train(
    model: TransformerForecaster,
    data: &Dataset,
    plan: &TrainPlan,
    backend: &dyn GradientBackend,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Contract(
            "training needs non-empty training and validation sets".into(),
        ));
    }
    if plan.batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    let mut model = model;
    let mut adam = AdamState::new(model.params(), plan.adam);
    let initial_val_mse = evaluate_mse(&model, &data.validation)?;
    let mut best = Checkpoint {
        config: model.config().clone(),
        params: model.params().clone(),
        adam: None,
        best_val_mse: initial_val_mse,
        epoch: 0,
    };
    observer.on_improvement(&best)?;

    let mut rng = ChaCha8Rng::seed_from_u64(plan.shuffle_seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut trace = Vec::with_capacity(plan.max_epochs);

    for epoch in 1..=plan.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(plan.batch_size).enumerate() {
            let batch: Vec<&WindowedSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let (loss, grads) = backend.loss_and_grad(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grads, &mut adam)?;
        }
        let val_mse = evaluate_mse(&model, &data.validation)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: val_mse,
            });
        }
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / data.train.len() as f64,
            val_mse,
            steps: adam.step,
        };
        log::debug!(
            "epoch {epoch}: train {:.3e} val {:.3e}",
            record.train_mse,
            record.val_mse
        );
        observer.on_epoch(&record)?;
        trace.push(record);
        if val_mse < best.best_val_mse {
            best = Checkpoint {
                config: model.config().clone(),
                params: model.params().clone(),
                adam: Some(adam.clone()),
                best_val_mse: val_mse,
                epoch,
            };
            observer.on_improvement(&best)?;
        }
    }

    let last_val = trace.last().map_or(initial_val_mse, |r| r.val_mse);
    let last = Checkpoint {
        config: model.config().clone(),
        adam: Some(adam),
        best_val_mse: last_val,
        epoch: plan.max_epochs,
        params: model.into_params(),
    };
    Ok(TrainReport {
        best,
        initial_val_mse,
        trace,
        last,
    })
}

/// Continues from a checkpoint's weights on new data. The checkpoint must
/// have been produced for `config`; optimizer moments are not carried over.
pub fn transfer_retrain(
    checkpoint: &Checkpoint,
    config: &ModelConfig,
    data: &Dataset,
    plan: &TrainPlan,
    backend: &dyn GradientBackend,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    if &checkpoint.config != config {
        return Err(Error::ConfigMismatch {
            expected: format!("{config:?}"),
            found: format!("{:?}", checkpoint.config),
        });
    }
    train(checkpoint.model()?, data, plan, backend, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn scalar_set(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(String::from(name), Tensor::scalar(v));
        p
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn mse_matches_two_pass_oracle() {
        let p = [0.12, -0.7, 0.33, 0.91, -0.05];
        let l = [0.1, -0.69, 0.4, 0.8, 0.0];
        let diffs: Vec<f64> = p.iter().zip(&l).map(|(a, b)| a - b).collect();
        let mut sq = 0.0;
        for d in &diffs {
            sq += d * d;
        }
        assert!((mse_loss(&p, &l).unwrap() - sq / 5.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut params = scalar_set("w", 0.7);
        let mut st = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut params, &scalar_set("w", 0.0), &mut st).unwrap();
        assert_eq!(params["w"].data()[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut params = scalar_set("w", 1.0);
            let cfg = AdamConfig::default();
            let mut st = AdamState::new(&params, cfg);
            adam_step(&mut params, &scalar_set("w", g), &mut st).unwrap();
            let delta = params["w"].data()[0] - 1.0;
            let expect = -cfg.lr * if g > 0.0 { 1.0 } else { -1.0 };
            assert!((delta - expect).abs() < cfg.lr * 1e-4);
        }
    }

    #[test]
    fn three_step_recurrence() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let gs = [0.5, -0.25, 1.5];
        let mut params = scalar_set("w", 2.0);
        let mut st = AdamState::new(&params, cfg);
        for g in gs {
            adam_step(&mut params, &scalar_set("w", g), &mut st).unwrap();
        }
        // hand recurrence
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 2.0f64);
        for (i, g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((params["w"].data()[0] - w).abs() < 1e-12);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut params = scalar_set("w", 1.0);
        let mut st = AdamState::new(&params, AdamConfig::default());
        let mut g = ParamSet::new();
        g.insert("w".into(), Tensor::zeros(2, 1));
        assert!(matches!(
            adam_step(&mut params, &g, &mut st),
            Err(Error::Shape { .. })
        ));
        assert!(adam_step(&mut params, &scalar_set("v", 1.0), &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
