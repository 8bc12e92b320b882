//! Trajectories of ⟨σz(t)⟩ and the window slicing that turns them into
//! supervised samples.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Values above this magnitude cannot be a Pauli expectation.
pub const VALUE_BOUND: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    External,
    Surrogate,
    Prediction,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::External => "external",
            Source::Surrogate => "surrogate",
            Source::Prediction => "prediction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "external" => Some(Source::External),
            "surrogate" => Some(Source::Surrogate),
            "prediction" => Some(Source::Prediction),
            _ => None,
        }
    }
}

/// Physical parameters of a trajectory, in units of the tunneling element.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda: f64,
    pub omega_c: f64,
    pub beta: f64,
    pub source: Source,
}

impl TrajectoryMeta {
    pub fn new(epsilon: f64, lambda: f64, omega_c: f64, beta: f64, source: Source) -> Self {
        Self {
            epsilon,
            delta: 1.0,
            lambda,
            omega_c,
            beta,
            source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.epsilon, self.delta, self.lambda, self.omega_c, self.beta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("trajectory parameters must be finite".into()));
        }
        if self.lambda < 0.0 || self.omega_c <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Contract(alloc::format!(
                "need lambda >= 0, omega_c > 0, beta > 0; got lambda={} omega_c={} beta={}",
                self.lambda,
                self.omega_c,
                self.beta
            )));
        }
        Ok(())
    }
}

/// ⟨σz⟩ sampled on the uniform grid `tₙ = (n−1)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Grid time of index `n` (zero-based).
pub fn grid_time(n: usize, dt: f64) -> f64 {
    n as f64 * dt
}

impl Trajectory {
    /// Builds a trajectory on the canonical grid starting at zero.
    pub fn on_grid(meta: TrajectoryMeta, dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|n| grid_time(n, dt)).collect();
        let traj = Self {
            meta,
            dt,
            times,
            values,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time grid and value checks. Prediction files are exempt from the
    /// value bound since rollouts are not clamped.
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::Contract("dt must be positive".into()));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::Contract(alloc::format!(
                "{} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) {
                return Err(Error::Contract(alloc::format!(
                    "times not increasing at index {}",
                    i + 1
                )));
            }
            if (step - self.dt).abs() > 1e-9 {
                return Err(Error::Contract(alloc::format!(
                    "time step {step} at index {} departs from dt={}",
                    i + 1,
                    self.dt
                )));
            }
        }
        if self.meta.source != Source::Prediction {
            if let Some((i, v)) = self
                .values
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.abs() <= VALUE_BOUND))
            {
                return Err(Error::Contract(alloc::format!(
                    "value {v} at index {i} outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Input window, its time stamps and the value one step after it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub y: f64,
}

/// Slice geometry: `window = slice_len − 1` inputs plus one label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicerConfig {
    pub points: usize,
    pub slice_len: usize,
    pub dt: f64,
}

impl Default for SlicerConfig {
    fn default() -> Self {
        Self {
            points: 201,
            slice_len: 42,
            dt: 0.1,
        }
    }
}

impl SlicerConfig {
    pub fn for_window(window: usize, points: usize, dt: f64) -> Self {
        Self {
            points,
            slice_len: window + 1,
            dt,
        }
    }

    pub fn window(&self) -> usize {
        self.slice_len - 1
    }

    pub fn slices_per_trajectory(&self) -> usize {
        (self.points + 1).saturating_sub(self.slice_len)
    }
}

/// All `L − P + 1` consecutive slices of a trajectory.
pub fn window_slice(traj: &Trajectory, slice_len: usize) -> Result<Vec<WindowedSample>> {
    if slice_len < 2 {
        return Err(Error::Contract("slice length must be at least 2".into()));
    }
    if traj.len() < slice_len {
        return Err(Error::Contract(alloc::format!(
            "trajectory has {} points, slice needs {slice_len}",
            traj.len()
        )));
    }
    let window = slice_len - 1;
    Ok((0..=traj.len() - slice_len)
        .map(|i| WindowedSample {
            x: traj.values[i..i + window].to_vec(),
            t: traj.times[i..i + window].to_vec(),
            y: traj.values[i + window],
        })
        .collect())
}

/// Slices a whole corpus.
pub fn slice_all<'a>(
    trajs: impl IntoIterator<Item = &'a Trajectory>,
    slice_len: usize,
) -> Result<Vec<WindowedSample>> {
    let mut out = Vec::new();
    for t in trajs {
        out.extend(window_slice(t, slice_len)?);
    }
    Ok(out)
}

fn check_fraction(val_fraction: f64) -> Result<()> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Contract(alloc::format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    Ok(())
}

/// `⌈n·(1−f)⌉` training items, the rest for validation.
pub fn train_count(n: usize, val_fraction: f64) -> usize {
    // guard against 0.8 * 10 = 8.000000000000002
    let exact = n as f64 * (1.0 - val_fraction);
    let rounded = libm::round(exact);
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        libm::ceil(exact) as usize
    }
}

/// Seeded random partition by item.
pub fn split_dataset<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(items.len(), val_fraction, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        val.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Seeded random partition of `0..n`; both halves are returned in
/// ascending order.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Contract("cannot split an empty data set".into()));
    }
    check_fraction(val_fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(n, val_fraction);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Partition individual slices.
    #[default]
    BySample,
    /// Partition whole trajectories before slicing.
    ByTrajectory,
}

impl SplitMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sample" => Some(SplitMode::BySample),
            "trajectory" => Some(SplitMode::ByTrajectory),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitMode::BySample => "sample",
            SplitMode::ByTrajectory => "trajectory",
        }
    }
}

/// Training and validation samples ready for the trainer.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<WindowedSample>,
    pub validation: Vec<WindowedSample>,
}

/// Slice and split a corpus in the requested mode.
pub fn build_dataset(
    trajs: &[Trajectory],
    slice_len: usize,
    val_fraction: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<Dataset> {
    match mode {
        SplitMode::BySample => {
            let all = slice_all(trajs, slice_len)?;
            let (train, validation) = split_dataset(&all, val_fraction, seed)?;
            Ok(Dataset { train, validation })
        }
        SplitMode::ByTrajectory => {
            let (tr, va) = split_indices(trajs.len(), val_fraction, seed)?;
            Ok(Dataset {
                train: slice_all(tr.iter().map(|&i| &trajs[i]), slice_len)?,
                validation: slice_all(va.iter().map(|&i| &trajs[i]), slice_len)?,
            })
        }
    }
}

/// Debug label for a trajectory's parameters.
pub fn describe(meta: &TrajectoryMeta) -> String {
    alloc::format!(
        "eps={} lambda={} omega_c={} beta={}",
        meta.epsilon,
        meta.lambda,
        meta.omega_c,
        meta.beta
    )
}
