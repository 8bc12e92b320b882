//! End-to-end training behaviour on small models.

use qdyn_core::data::{slice_all, Dataset, Source, Trajectory, TrajectoryMeta, WindowedSample};
use qdyn_core::rollout::predict_next;
use qdyn_core::surrogate::{generate_surrogate, SurrogateConfig};
use qdyn_core::trainer::{
    evaluate_mse, train, transfer_retrain, AdamConfig, EpochRecord, SerialBackend, TrainObserver,
    TrainPlan,
};
use qdyn_core::transformer::{ModelConfig, TransformerForecaster};

fn surrogate(epsilon: f64, lambda: f64, points: usize) -> Trajectory {
    let meta = TrajectoryMeta::new(epsilon, lambda, 1.0, 1.0, Source::Surrogate);
    generate_surrogate(&meta, &SurrogateConfig::default(), 0.1, points, None).unwrap()
}

fn small() -> ModelConfig {
    ModelConfig::small(5, 8, 16, 8, 8)
}

fn plan(epochs: usize, lr: f64, batch: usize) -> TrainPlan {
    TrainPlan {
        batch_size: batch,
        max_epochs: epochs,
        shuffle_seed: 3,
        deterministic: true,
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
    }
}

fn family(lambdas: &[f64], window: usize) -> Dataset {
    let train: Vec<Trajectory> = lambdas.iter().map(|&l| surrogate(0.0, l, 41)).collect();
    let val = surrogate(0.0, lambdas.iter().sum::<f64>() / lambdas.len() as f64, 41);
    Dataset {
        train: slice_all(&train, window + 1).unwrap(),
        validation: slice_all([&val], window + 1).unwrap(),
    }
}

#[test]
fn single_sample_is_memorized() {
    let traj = surrogate(1.0, 0.2, 30);
    let sample = slice_all([&traj], 12).unwrap().swap_remove(7);
    let data = Dataset {
        train: vec![sample.clone()],
        validation: vec![sample.clone()],
    };
    let model = TransformerForecaster::init(ModelConfig::tiny(), 11).unwrap();
    let report = train(model, &data, &plan(200, 1e-3, 128), &SerialBackend, &mut ()).unwrap();
    let best = report.best.model().unwrap();
    let mse = evaluate_mse(&best, &data.train).unwrap();
    assert!(mse < 1e-6, "training MSE {mse}");
    let next = predict_next(&best, &sample.x, &sample.t).unwrap();
    assert!((next - sample.y).abs() < 1e-3);
    assert_eq!(next, best.forward(&sample.x, &sample.t).unwrap());
}

#[test]
fn one_epoch_is_bitwise_reproducible() {
    let data = family(&[0.1, 0.3], 5);
    let run = || {
        let model = TransformerForecaster::init(small(), 4).unwrap();
        train(model, &data, &plan(1, 1e-3, 16), &SerialBackend, &mut ()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.trace[0].train_mse.to_bits(), b.trace[0].train_mse.to_bits());
    assert_eq!(a.trace[0].val_mse.to_bits(), b.trace[0].val_mse.to_bits());
    assert_eq!(a.last.params, b.last.params);
}

#[derive(Default)]
struct Recorder {
    epochs: Vec<EpochRecord>,
    improvements: Vec<(usize, f64)>,
}

impl TrainObserver for Recorder {
    fn on_epoch(&mut self, r: &EpochRecord) -> qdyn_core::Result<()> {
        self.epochs.push(*r);
        Ok(())
    }

    fn on_improvement(&mut self, c: &qdyn_core::trainer::Checkpoint) -> qdyn_core::Result<()> {
        self.improvements.push((c.epoch, c.best_val_mse));
        Ok(())
    }
}

#[test]
fn best_checkpoint_is_trace_minimum() {
    let data = family(&[0.1, 0.2, 0.4], 5);
    let n_train = data.train.len();
    let model = TransformerForecaster::init(small(), 5).unwrap();
    let mut rec = Recorder::default();
    let report = train(model, &data, &plan(25, 3e-3, 16), &SerialBackend, &mut rec).unwrap();
    let best = report.best.best_val_mse;
    assert!(best <= report.initial_val_mse);
    for r in &report.trace {
        assert!(best <= r.val_mse, "epoch {}", r.epoch);
    }
    let min = report
        .trace
        .iter()
        .map(|r| r.val_mse)
        .fold(report.initial_val_mse, f64::min);
    assert_eq!(best, min);
    // the stored weights really score the stored value
    let again = evaluate_mse(&report.best.model().unwrap(), &data.validation).unwrap();
    assert_eq!(again, best);
    // one Adam step per batch
    for (k, r) in report.trace.iter().enumerate() {
        assert_eq!(r.steps as usize, (k + 1) * n_train.div_ceil(16));
    }
    assert_eq!(rec.epochs, report.trace);
    assert_eq!(rec.improvements[0], (0, report.initial_val_mse));
    let vals: Vec<f64> = rec.improvements.iter().map(|i| i.1).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn short_last_batch_is_used() {
    let data = family(&[0.1], 5);
    assert_eq!(data.train.len(), 36);
    let model = TransformerForecaster::init(small(), 6).unwrap();
    let report = train(model, &data, &plan(2, 1e-3, 10), &SerialBackend, &mut ()).unwrap();
    assert_eq!(report.trace[1].steps, 8);
}

#[test]
fn empty_sets_rejected() {
    let data = family(&[0.1], 5);
    let model = TransformerForecaster::init(small(), 6).unwrap();
    let no_val = Dataset {
        train: data.train.clone(),
        validation: vec![],
    };
    assert!(train(model.clone(), &no_val, &plan(1, 1e-3, 8), &SerialBackend, &mut ()).is_err());
    assert!(train(model, &data, &plan(1, 1e-3, 0), &SerialBackend, &mut ()).is_err());
}

#[test]
fn warm_start_identity_and_zero_epochs() {
    let data = family(&[0.1, 0.3], 5);
    let model = TransformerForecaster::init(small(), 7).unwrap();
    let first = train(model, &data, &plan(5, 1e-3, 16), &SerialBackend, &mut ()).unwrap();
    let again = transfer_retrain(&first.best, &small(), &data, &plan(3, 1e-3, 16), &SerialBackend, &mut ()).unwrap();
    assert!((again.initial_val_mse - first.best.best_val_mse).abs() < 1e-12);
    // fresh moments: the warm run's Adam step count restarts
    assert_eq!(again.trace[0].steps, data.train.len().div_ceil(16) as u64);

    let zero = transfer_retrain(&first.best, &small(), &data, &plan(0, 1e-3, 16), &SerialBackend, &mut ()).unwrap();
    assert_eq!(zero.best.params, first.best.params);
    assert!(zero.trace.is_empty());

    let other = ModelConfig {
        fc2: 9,
        ..small()
    };
    let err = transfer_retrain(&first.best, &other, &data, &plan(1, 1e-3, 16), &SerialBackend, &mut ()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("fc2: 9") && msg.contains("fc2: 8"), "{msg}");
}

/// Epochs until validation MSE first reaches `target`, 0 meaning the
/// starting weights already do.
fn epochs_to(report: &qdyn_core::trainer::TrainReport, target: f64) -> usize {
    if report.initial_val_mse <= target {
        return 0;
    }
    report
        .trace
        .iter()
        .find(|r| r.val_mse <= target)
        .map_or(usize::MAX, |r| r.epoch)
}

#[test]
fn warm_start_beats_cold_start_on_shifted_family() {
    let base = family(&[0.1, 0.2, 0.3], 5);
    let shifted = family(&[0.12, 0.22, 0.32], 5);
    let target = 2e-4;
    let mut warm = Vec::new();
    let mut cold = Vec::new();
    for seed in 0..5 {
        let model = TransformerForecaster::init(small(), 100 + seed).unwrap();
        let pre = train(model, &base, &plan(150, 3e-3, 16), &SerialBackend, &mut ()).unwrap();
        let w = transfer_retrain(&pre.best, &small(), &shifted, &plan(150, 3e-3, 16), &SerialBackend, &mut ()).unwrap();
        let fresh = TransformerForecaster::init(small(), 200 + seed).unwrap();
        let c = train(fresh, &shifted, &plan(150, 3e-3, 16), &SerialBackend, &mut ()).unwrap();
        warm.push(epochs_to(&w, target));
        cold.push(epochs_to(&c, target));
    }
    warm.sort_unstable();
    cold.sort_unstable();
    assert!(warm[2] < cold[2], "warm {warm:?} cold {cold:?}");
}

#[test]
fn samples_carry_their_grid_times() {
    let traj = surrogate(0.0, 0.1, 20);
    let s: Vec<WindowedSample> = slice_all([&traj], 6).unwrap();
    assert_eq!(s.len(), 15);
    assert_eq!(s[3].t[0], traj.times[3]);
    assert_eq!(s[3].y, traj.values[8]);
}
