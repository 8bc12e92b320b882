//! The four subcommands as library calls.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qdyn_core::data::{build_dataset, split_indices, Source, Trajectory, TrajectoryMeta};
use qdyn_core::rollout::{rollout, Predictor, RolloutResult};
use qdyn_core::surrogate::generate_surrogate;
use qdyn_core::trainer::{self, Checkpoint, EpochRecord, TrainObserver, TrainReport};
use qdyn_core::transformer::TransformerForecaster;

use crate::backend;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, LoadedTrajectory, ManifestEntry};
use crate::error::{QdynError, Result};
use crate::fsutil;
use crate::trajfile::{self, format_real, TrajectoryFile};

/// Runs `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let per = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .enumerate()
            .map(|(c, chunk)| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .enumerate()
                        .map(|(j, x)| f(c * per + j, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

// ---- generate ----

/// Surrogate trajectories over the configured grid. Noise, when enabled,
/// is seeded per trajectory from `seed`.
pub fn generate_trajectories(cfg: &RunConfig, seed: u64, jobs: usize) -> Result<Vec<TrajectoryFile>> {
    if cfg.grid.is_empty() {
        return Err(QdynError::Usage("parameter grid is empty".into()));
    }
    let points = cfg.grid.points();
    par_map(&points, jobs, |i, &(epsilon, lambda, omega_c, beta)| {
        let meta = TrajectoryMeta {
            epsilon,
            delta: 1.0,
            lambda,
            omega_c,
            beta,
            source: Source::Surrogate,
        };
        let noise_seed = seed.wrapping_add(i as u64);
        generate_surrogate(&meta, &cfg.surrogate, cfg.model.dt, cfg.points, Some(noise_seed))
            .map(TrajectoryFile::from)
            .map_err(QdynError::from)
    })
    .into_iter()
    .collect()
}

pub fn generate(cfg: &RunConfig, out_dir: &Path, seed: u64, jobs: usize) -> Result<Vec<ManifestEntry>> {
    let files = generate_trajectories(cfg, seed, jobs)?;
    dataset::write_dataset(out_dir, &files)
}

// ---- train ----

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: RunConfig,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>.csv`.
    pub log: Option<PathBuf>,
    pub seed: u64,
    pub warm_start: Option<PathBuf>,
}

pub fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".csv");
    PathBuf::from(s)
}

/// Directory that receives withheld trajectories when `holdout > 0`.
pub fn holdout_dir(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".holdout");
    PathBuf::from(s)
}

/// Writes the CSV log and persists every improved checkpoint.
struct FileObserver {
    log: BufWriter<File>,
    log_path: PathBuf,
    out: PathBuf,
    started: Instant,
    failure: Option<QdynError>,
}

impl FileObserver {
    fn stash(&mut self, e: QdynError) -> qdyn_core::Error {
        let msg = e.to_string();
        self.failure = Some(e);
        qdyn_core::Error::Contract(msg)
    }
}

impl TrainObserver for FileObserver {
    fn on_epoch(&mut self, r: &EpochRecord) -> qdyn_core::Result<()> {
        let line = format!(
            "{},{},{},{:.3}\n",
            r.epoch,
            format_real(r.train_mse),
            format_real(r.val_mse),
            self.started.elapsed().as_secs_f64()
        );
        let res = self.log.write_all(line.as_bytes()).and_then(|_| self.log.flush());
        res.map_err(|e| {
            let err = QdynError::io(&self.log_path, e);
            self.stash(err)
        })
    }

    fn on_improvement(&mut self, c: &Checkpoint) -> qdyn_core::Result<()> {
        let out = self.out.clone();
        checkpoint::save(&out, c).map_err(|e| self.stash(e))
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub holdout: Vec<String>,
}

fn check_grid(trajs: &[LoadedTrajectory], dt: f64, min_len: usize) -> Result<()> {
    for t in trajs {
        let tr = &t.file.trajectory;
        if (tr.dt - dt).abs() > 1e-12 {
            return Err(QdynError::Data(format!(
                "{}: dt={} but the model expects dt={dt}",
                t.path.display(),
                tr.dt
            )));
        }
        if tr.len() < min_len {
            return Err(QdynError::Data(format!(
                "{}: {} points, need at least {min_len}",
                t.path.display(),
                tr.len()
            )));
        }
    }
    Ok(())
}

pub fn train(opts: &TrainOptions) -> Result<TrainOutcome> {
    let cfg = &opts.config;
    cfg.validate()?;
    let loaded = dataset::load_dataset(&opts.data_dir)?;
    check_grid(&loaded, cfg.model.dt, cfg.model.window + 1)?;

    let (keep, held): (Vec<usize>, Vec<usize>) = if cfg.holdout == 0 {
        ((0..loaded.len()).collect(), Vec::new())
    } else {
        if cfg.holdout >= loaded.len() {
            return Err(QdynError::Usage(format!(
                "holdout={} leaves nothing to train on ({} trajectories)",
                cfg.holdout,
                loaded.len()
            )));
        }
        let f = cfg.holdout as f64 / loaded.len() as f64;
        split_indices(loaded.len(), f, opts.seed)?
    };
    if !held.is_empty() {
        let files: Vec<TrajectoryFile> = held.iter().map(|&i| loaded[i].file.clone()).collect();
        dataset::write_dataset(&holdout_dir(&opts.out), &files)?;
    }
    let trajs: Vec<Trajectory> = keep.iter().map(|&i| loaded[i].file.trajectory.clone()).collect();
    let data = build_dataset(&trajs, cfg.model.window + 1, cfg.val_fraction, cfg.split, opts.seed)?;
    log::info!(
        "{} trajectories: {} training and {} validation samples",
        trajs.len(),
        data.train.len(),
        data.validation.len()
    );

    let mut plan = cfg.plan;
    plan.shuffle_seed = opts.seed;
    let backend = backend::select(cfg.jobs, plan.deterministic);

    let log_path = opts.log.clone().unwrap_or_else(|| default_log_path(&opts.out));
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| QdynError::io(&log_path, e))?);
    log.write_all(b"epoch,train_mse,val_mse,seconds\n")
        .and_then(|_| log.flush())
        .map_err(|e| QdynError::io(&log_path, e))?;
    let mut observer = FileObserver {
        log,
        log_path,
        out: opts.out.clone(),
        started: Instant::now(),
        failure: None,
    };

    let result = match &opts.warm_start {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            trainer::transfer_retrain(&ckpt, &cfg.model, &data, &plan, &*backend, &mut observer)
        }
        None => {
            let model = TransformerForecaster::init(cfg.model.clone(), opts.seed)?;
            trainer::train(model, &data, &plan, &*backend, &mut observer)
        }
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(observer.failure.take().unwrap_or(QdynError::Core(e))),
    };
    checkpoint::save(&opts.out, &report.best)?;
    Ok(TrainOutcome {
        report,
        train_samples: data.train.len(),
        validation_samples: data.validation.len(),
        holdout: held.iter().map(|&i| loaded[i].name.clone()).collect(),
    })
}

// ---- predict ----

/// Seeds from the first `T` points of `input` and rolls `steps` forward.
pub fn predict_file<P: Predictor + ?Sized>(
    model: &P,
    dt: f64,
    input: &Trajectory,
    steps: usize,
) -> Result<(RolloutResult, Trajectory)> {
    let window = model.window_len();
    if input.len() < window {
        return Err(QdynError::Data(format!(
            "input has {} points but the model needs a {window}-point seed",
            input.len()
        )));
    }
    if (input.dt - dt).abs() > 1e-12 {
        return Err(QdynError::Usage(format!(
            "input dt={} does not match the model's dt={dt}",
            input.dt
        )));
    }
    let start = (input.times[0] / dt).round();
    if start < 0.0 || (input.times[0] - start * dt).abs() > 1e-9 {
        return Err(QdynError::Data(format!(
            "first time {} is not on the grid of spacing {dt}",
            input.times[0]
        )));
    }
    let r = rollout(model, &input.values[..window], start as usize, dt, steps)?;
    let mut times = input.times[..window].to_vec();
    times.extend_from_slice(&r.times);
    let mut values = r.seed_values.clone();
    values.extend_from_slice(&r.values);
    let out = Trajectory {
        meta: TrajectoryMeta {
            source: Source::Prediction,
            ..input.meta.clone()
        },
        dt,
        times,
        values,
    };
    out.validate()?;
    Ok((r, out))
}

pub fn predict(ckpt_path: &Path, input: &Path, steps: usize, out: &Path) -> Result<Trajectory> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let model = ckpt.model()?;
    let input = trajfile::load(input)?;
    let (_, traj) = predict_file(&model, ckpt.config.dt, &input.trajectory, steps)?;
    let mut file = TrajectoryFile::from(traj.clone());
    file.extra.insert("seed_len".into(), model.config().window.to_string());
    file.extra.insert("model_checksum".into(), checkpoint::checksum(&ckpt));
    trajfile::save(out, &file)?;
    Ok(traj)
}

// ---- evaluate ----

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub meta: TrajectoryMeta,
    pub horizon: usize,
    pub mae: f64,
    pub full_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_mae: f64,
    pub mean_full_mae: f64,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = String::from("trajectory,epsilon,delta,lambda,omega_c,beta,horizon,mae,full_mae\n");
        for r in &self.rows {
            let m = &r.meta;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.name,
                m.epsilon,
                m.delta,
                m.lambda,
                m.omega_c,
                m.beta,
                r.horizon,
                format_real(r.mae),
                format_real(r.full_mae)
            ));
        }
        s.push_str(&format!(
            "mean,,,,,,,{},{}\n",
            format_real(self.mean_mae),
            format_real(self.mean_full_mae)
        ));
        s
    }
}

/// Plot rows `t,reference,prediction`; seed points repeat the reference.
pub fn plot_csv(reference: &Trajectory, r: &RolloutResult) -> String {
    let mut s = String::from("t,reference,prediction\n");
    let n = r.seed_values.len() + r.values.len();
    for i in 0..n {
        let pred = if i < r.seed_values.len() {
            r.seed_values[i]
        } else {
            r.values[i - r.seed_values.len()]
        };
        s.push_str(&format!(
            "{},{},{}\n",
            format_real(reference.times[i]),
            format_real(reference.values[i]),
            format_real(pred)
        ));
    }
    s
}

/// Rolls every reference out from its first `T` points. Without a horizon
/// the rollout covers the rest of each reference.
pub fn evaluate_with<P: Predictor + Sync + ?Sized>(
    model: &P,
    dt: f64,
    refs: &[LoadedTrajectory],
    horizon: Option<usize>,
    jobs: usize,
) -> Result<(EvalReport, Vec<RolloutResult>)> {
    if refs.is_empty() {
        return Err(QdynError::Data("no reference trajectories".into()));
    }
    let window = model.window_len();
    let results: Vec<Result<(EvalRow, RolloutResult)>> = par_map(refs, jobs, |_, lt| {
        let traj = &lt.file.trajectory;
        let h = horizon.unwrap_or(traj.len().saturating_sub(window));
        if h == 0 || traj.len() < window + h {
            return Err(QdynError::Data(format!(
                "{}: {} points cannot cover a {window}-point seed plus horizon {h}",
                lt.path.display(),
                traj.len()
            )));
        }
        let (mut r, _) = predict_file(model, dt, traj, h)?;
        let mae = r.score(&traj.values[window..window + h])?;
        let full_mae = r.full_mae().expect("scored");
        Ok((
            EvalRow {
                name: lt.name.clone(),
                meta: traj.meta.clone(),
                horizon: h,
                mae,
                full_mae,
            },
            r,
        ))
    });
    let mut rows = Vec::with_capacity(refs.len());
    let mut rolls = Vec::with_capacity(refs.len());
    for res in results {
        let (row, r) = res?;
        rows.push(row);
        rolls.push(r);
    }
    let n = rows.len() as f64;
    let mean_mae = rows.iter().map(|r| r.mae).sum::<f64>() / n;
    let mean_full_mae = rows.iter().map(|r| r.full_mae).sum::<f64>() / n;
    Ok((
        EvalReport {
            rows,
            mean_mae,
            mean_full_mae,
        },
        rolls,
    ))
}

pub struct EvaluateOptions<'a> {
    pub checkpoint: &'a Path,
    pub data_dir: &'a Path,
    pub report: &'a Path,
    pub plots: Option<&'a Path>,
    pub horizon: Option<usize>,
    pub jobs: usize,
}

pub fn evaluate(opts: &EvaluateOptions) -> Result<EvalReport> {
    let ckpt = checkpoint::load(opts.checkpoint)?;
    let model = ckpt.model()?;
    let refs = dataset::load_dataset(opts.data_dir)?;
    let (report, rolls) = evaluate_with(&model, ckpt.config.dt, &refs, opts.horizon, opts.jobs)?;
    fsutil::write_atomic(opts.report, report.render().as_bytes())?;
    if let Some(dir) = opts.plots {
        fsutil::create_dir_all(dir)?;
        for (lt, r) in refs.iter().zip(&rolls) {
            let stem = Path::new(&lt.name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| lt.name.clone());
            let path = dir.join(format!("{stem}.plot.csv"));
            fsutil::write_atomic(&path, plot_csv(&lt.file.trajectory, r).as_bytes())?;
        }
    }
    Ok(report)
}
