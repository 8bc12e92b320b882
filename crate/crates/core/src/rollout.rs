//! Autoregressive long-time prediction.
//!
//! Each step feeds the last `T` values (seed values first, then earlier
//! predictions) together with their grid times and appends the predicted
//! next value. Times are always `index · dt`, never accumulated.

use alloc::vec::Vec;

use crate::data::grid_time;
use crate::transformer::TransformerForecaster;
use crate::{Error, Result};

/// Anything that maps a window to the next value.
pub trait Predictor {
    fn window_len(&self) -> usize;
    fn predict_next(&self, values: &[f64], times: &[f64]) -> Result<f64>;
}

impl Predictor for TransformerForecaster {
    fn window_len(&self) -> usize {
        self.config().window
    }

    fn predict_next(&self, values: &[f64], times: &[f64]) -> Result<f64> {
        self.forward(values, times)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn window_len(&self) -> usize {
        (**self).window_len()
    }

    fn predict_next(&self, values: &[f64], times: &[f64]) -> Result<f64> {
        (**self).predict_next(values, times)
    }
}

/// Direct alias of the model's forward pass, checked for window length.
pub fn predict_next<P: Predictor + ?Sized>(model: &P, values: &[f64], times: &[f64]) -> Result<f64> {
    check_window(model.window_len(), values, times)?;
    model.predict_next(values, times)
}

fn check_window(expected: usize, values: &[f64], times: &[f64]) -> Result<()> {
    if values.len() != expected || times.len() != expected {
        return Err(Error::Contract(alloc::format!(
            "window needs {expected} values and times, got {} and {}",
            values.len(),
            times.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub seed_values: Vec<f64>,
    pub seed_times: Vec<f64>,
    pub values: Vec<f64>,
    pub times: Vec<f64>,
    /// `|prediction − reference|` per predicted point, when scored.
    pub abs_errors: Option<Vec<f64>>,
    /// Mean absolute error over the predicted horizon, when scored.
    pub mae: Option<f64>,
}

impl RolloutResult {
    /// Scores the predicted horizon against reference values aligned with
    /// `self.values`.
    pub fn score(&mut self, reference: &[f64]) -> Result<f64> {
        let err = abs_errors(&self.values, reference)?;
        let m = err.iter().sum::<f64>() / err.len() as f64;
        self.abs_errors = Some(err);
        self.mae = Some(m);
        Ok(m)
    }

    /// MAE over seed and horizon together; seed points contribute zero.
    pub fn full_mae(&self) -> Option<f64> {
        let errs = self.abs_errors.as_ref()?;
        let n = self.seed_values.len() + errs.len();
        Some(errs.iter().sum::<f64>() / n as f64)
    }
}

/// Rolls `horizon` steps forward from `seed_values` sampled at grid indices
/// `start_index, start_index+1, …`.
pub fn rollout<P: Predictor + ?Sized>(
    model: &P,
    seed_values: &[f64],
    start_index: usize,
    dt: f64,
    horizon: usize,
) -> Result<RolloutResult> {
    rollout_observed(model, seed_values, start_index, dt, horizon, |_, _, _| {})
}

/// [`rollout`] with a hook that sees every window before it is fed to the
/// model: `(step, values, times)`.
pub fn rollout_observed<P, F>(
    model: &P,
    seed_values: &[f64],
    start_index: usize,
    dt: f64,
    horizon: usize,
    mut observe: F,
) -> Result<RolloutResult>
where
    P: Predictor + ?Sized,
    F: FnMut(usize, &[f64], &[f64]),
{
    let window = model.window_len();
    if horizon == 0 {
        return Err(Error::Contract("rollout horizon must be at least 1".into()));
    }
    if seed_values.len() != window {
        return Err(Error::Contract(alloc::format!(
            "seed needs {window} values, got {}",
            seed_values.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    let seed_times: Vec<f64> = (0..window).map(|i| grid_time(start_index + i, dt)).collect();
    let mut history = seed_values.to_vec();
    let mut values = Vec::with_capacity(horizon);
    let mut times = Vec::with_capacity(horizon);
    let mut window_times = seed_times.clone();
    let mut warned = false;
    for step in 0..horizon {
        let first = start_index + step;
        for (i, t) in window_times.iter_mut().enumerate() {
            *t = grid_time(first + i, dt);
        }
        let x = &history[step..step + window];
        observe(step, x, &window_times);
        let y = model.predict_next(x, &window_times)?;
        if !y.is_finite() {
            return Err(Error::NonFinitePrediction { step, value: y });
        }
        if y.abs() > 1.05 && !warned {
            log::warn!("rollout step {step}: prediction {y} exceeds the physical range");
            warned = true;
        }
        history.push(y);
        values.push(y);
        times.push(grid_time(first + window, dt));
    }
    Ok(RolloutResult {
        seed_values: seed_values.to_vec(),
        seed_times,
        values,
        times,
        abs_errors: None,
        mae: None,
    })
}

fn abs_errors(predicted: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::Contract(alloc::format!(
            "mae needs equal non-empty inputs, got {} and {}",
            predicted.len(),
            reference.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).abs())
        .collect())
}

/// Mean absolute difference.
pub fn mae(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    let e = abs_errors(predicted, reference)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}
