use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use qdyn::checkpoint;
use qdyn::commands::{self, evaluate_with, TrainOptions};
use qdyn::config::{Grid, RunConfig};
use qdyn::dataset;
use qdyn::trajfile;
use qdyn_core::data::{grid_time, split_indices, Source, Trajectory, TrajectoryMeta};
use qdyn_core::rollout::Predictor;
use qdyn_core::transformer::{ModelConfig, TransformerForecaster};

fn qdyn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qdyn"))
        .args(args)
        .env_remove("QDYN_SEED")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "preset=tiny\npoints=41\nbatch_size=32\nlr=1e-3\n";

#[test]
fn generate_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("g.cfg"),
        "preset=tiny\npoints=30\nepsilons=0,1\nlambdas=0.1,0.2,0.3\nbetas=1\nnoise=0.001\n",
    );
    for out in ["a", "b"] {
        let o = qdyn(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join(out)), "--seed", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().collect();
    assert_eq!(names.len(), 7);
    let ma = std::fs::read(dir.path().join("a/manifest.txt")).unwrap();
    let mb = std::fs::read(dir.path().join("b/manifest.txt")).unwrap();
    assert_eq!(ma, mb);
    let o = qdyn(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("c")), "--seed", "6"]);
    assert!(o.status.success());
    assert_ne!(ma, std::fs::read(dir.path().join("c/manifest.txt")).unwrap());
}

#[test]
fn full_size_grid_gives_1000_files() {
    let cfg = RunConfig {
        grid: Grid {
            epsilons: vec![0.0, 1.0],
            lambdas: (1..=10).map(|i| 0.05 * i as f64).collect(),
            omega_cs: (1..=10).map(|i| i as f64).collect(),
            betas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
        },
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let entries = commands::generate(&cfg, dir.path(), 0, 1).unwrap();
    assert_eq!(entries.len(), 1000);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1001);
    let t = trajfile::load(&dir.path().join(&entries[999].path)).unwrap();
    assert_eq!(t.trajectory.len(), 201);
    assert_eq!(t.trajectory.meta.beta, 8.0);
}

#[test]
fn parallel_generation_matches_serial() {
    let cfg = RunConfig::default();
    let a = commands::generate_trajectories(&cfg, 1, 1).unwrap();
    let b = commands::generate_trajectories(&cfg, 1, 3).unwrap();
    assert_eq!(a, b);
}

fn tiny_dataset(dir: &Path, n_lambda: usize) -> PathBuf {
    let mut cfg = RunConfig::parse(TINY, Path::new("c")).unwrap();
    cfg.grid = Grid {
        epsilons: vec![0.0, 1.0],
        lambdas: (0..n_lambda).map(|i| 0.05 + 0.05 * i as f64).collect(),
        omega_cs: vec![1.0],
        betas: vec![1.0],
    };
    let data = dir.join("data");
    commands::generate(&cfg, &data, 0, 1).unwrap();
    data
}

#[test]
fn zero_epochs_writes_initial_weights_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let cfg = write(&dir.path().join("t.cfg"), TINY);
    let ckpt = dir.path().join("m.qtf");
    let o = qdyn(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--epochs", "0", "--seed", "9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = checkpoint::load(&ckpt).unwrap();
    let init = TransformerForecaster::init(ModelConfig::tiny(), 9).unwrap();
    assert_eq!(&c.params, init.params());
    assert_eq!(c.epoch, 0);
    let log = std::fs::read_to_string(commands::default_log_path(&ckpt)).unwrap();
    assert_eq!(log, "epoch,train_mse,val_mse,seconds\n");
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let cfg = write(&dir.path().join("t.cfg"), TINY);
    let ckpt = dir.path().join("m.qtf");
    let o = Command::new(env!("CARGO_BIN_EXE_qdyn"))
        .args(["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--epochs", "0"])
        .env("QDYN_SEED", "21")
        .output()
        .unwrap();
    assert!(o.status.success());
    let init = TransformerForecaster::init(ModelConfig::tiny(), 21).unwrap();
    assert_eq!(&checkpoint::load(&ckpt).unwrap().params, init.params());
}

#[test]
fn warm_start_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let cfg = RunConfig::parse(TINY, Path::new("c")).unwrap();
    let opts = |out: &str, epochs: usize, warm: Option<PathBuf>| {
        let mut config = cfg.clone();
        config.plan.max_epochs = epochs;
        TrainOptions {
            config,
            data_dir: data.clone(),
            out: dir.path().join(out),
            log: None,
            seed: 2,
            warm_start: warm,
        }
    };
    let first = commands::train(&opts("a.qtf", 3, None)).unwrap();
    let warm = commands::train(&opts("b.qtf", 2, Some(dir.path().join("a.qtf")))).unwrap();
    assert!((warm.report.initial_val_mse - first.report.best.best_val_mse).abs() < 1e-12);

    // a checkpoint of another architecture is refused as a usage error
    let other = write(&dir.path().join("o.cfg"), &format!("{TINY}fc2=32\n"));
    let o = qdyn(&[
        "train", "--config", s(&other), "--data", s(&data), "--out", s(&dir.path().join("c.qtf")),
        "--warm-start", s(&dir.path().join("a.qtf")), "--epochs", "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration mismatch"));
}

#[test]
fn holdout_trajectories_are_withheld() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 5);
    let mut config = RunConfig::parse(TINY, Path::new("c")).unwrap();
    config.holdout = 3;
    config.plan.max_epochs = 0;
    let out = dir.path().join("m.qtf");
    let r = commands::train(&TrainOptions {
        config,
        data_dir: data,
        out: out.clone(),
        log: None,
        seed: 4,
        warm_start: None,
    })
    .unwrap();
    assert_eq!(r.holdout.len(), 3);
    assert_eq!(r.train_samples + r.validation_samples, 7 * 30);
    assert_eq!(dataset::load_dataset(&commands::holdout_dir(&out)).unwrap().len(), 3);
    let (_, held) = split_indices(10, 0.3, 4).unwrap();
    let expect: Vec<String> = held.iter().map(|&i| dataset::file_name(i)).collect();
    assert_eq!(r.holdout, expect);
}

#[test]
fn predict_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let model = TransformerForecaster::init(ModelConfig::full(), 1).unwrap();
    let ckpt = dir.path().join("full.qtf");
    checkpoint::save(
        &ckpt,
        &qdyn_core::trainer::Checkpoint {
            config: ModelConfig::full(),
            params: model.params().clone(),
            adam: None,
            best_val_mse: 1.0,
            epoch: 0,
        },
    )
    .unwrap();
    let cfg = RunConfig::default();
    let one = &commands::generate_trajectories(&cfg, 0, 1).unwrap()[3];
    let input = dir.path().join("in.csv");
    trajfile::save(&input, one).unwrap();

    let out = dir.path().join("p1.csv");
    let o = qdyn(&["predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--steps", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = trajfile::load(&out).unwrap();
    assert_eq!(p.trajectory.len(), 42);
    assert_eq!(p.trajectory.meta.source, Source::Prediction);
    assert_eq!(p.extra["seed_len"], "41");
    assert_eq!(p.extra["model_checksum"].len(), 64);
    assert_eq!(&p.trajectory.times[..41], &one.trajectory.times[..41]);
    assert_eq!(&p.trajectory.values[..41], &one.trajectory.values[..41]);
    let direct = model.forward(&one.trajectory.values[..41], &one.trajectory.times[..41]).unwrap();
    assert_eq!(p.trajectory.values[41], direct);

    let out = dir.path().join("p160.csv");
    let o = qdyn(&["predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--steps", "160", "--out", s(&out)]);
    assert!(o.status.success());
    let p = trajfile::load(&out).unwrap().trajectory;
    assert_eq!(p.len(), 201);
    assert!((p.times[200] - 20.0).abs() < 1e-12);

    let short = dir.path().join("short.csv");
    let mut t = one.clone();
    t.trajectory.times.truncate(30);
    t.trajectory.values.truncate(30);
    trajfile::save(&short, &t).unwrap();
    let o = qdyn(&["predict", "--checkpoint", s(&ckpt), "--input", s(&short), "--steps", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
}

/// Returns the reference value that follows the window.
struct Echo<'a> {
    series: &'a [f64],
    window: usize,
}

impl Predictor for Echo<'_> {
    fn window_len(&self) -> usize {
        self.window
    }

    fn predict_next(&self, _x: &[f64], t: &[f64]) -> qdyn_core::Result<f64> {
        let i = (t[self.window - 1] / 0.1).round() as usize;
        Ok(self.series[i + 1])
    }
}

#[test]
fn evaluate_with_exact_stub_scores_zero() {
    let meta = TrajectoryMeta::new(0.0, 0.1, 1.0, 1.0, Source::External);
    let values: Vec<f64> = (0..50).map(|i| (0.3 * grid_time(i, 0.1)).cos()).collect();
    let traj = Trajectory::on_grid(meta, 0.1, values.clone()).unwrap();
    let refs: Vec<dataset::LoadedTrajectory> = (0..3)
        .map(|i| dataset::LoadedTrajectory {
            path: PathBuf::from(format!("r{i}")),
            name: format!("r{i}"),
            file: traj.clone().into(),
        })
        .collect();
    let stub = Echo { series: &values, window: 7 };
    let (report, rolls) = evaluate_with(&stub, 0.1, &refs, None, 2).unwrap();
    assert!(report.rows.iter().all(|r| r.mae == 0.0 && r.horizon == 43));
    assert_eq!(report.mean_mae, 0.0);
    assert_eq!(report.render().lines().count(), 1 + 3 + 1);
    assert!(report.render().lines().last().unwrap().starts_with("mean,"));
    let plot = commands::plot_csv(&traj, &rolls[0]);
    assert_eq!(plot.lines().count(), 51);
    assert!(evaluate_with(&stub, 0.1, &refs, Some(44), 1).is_err());
    assert!(evaluate_with(&stub, 0.1, &[], None, 1).is_err());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qdyn(&["frobnicate"]).status.code(), Some(2));
    let bad = write(&dir.path().join("bad.cfg"), "windw=3\n");
    let o = qdyn(&["generate", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key windw"));
    let o = qdyn(&[
        "train", "--data", s(&dir.path().join("missing")), "--out", s(&dir.path().join("m.qtf")),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let data = tiny_dataset(dir.path(), 2);
    let blow = write(&dir.path().join("nan.cfg"), &format!("{}lr=1e300\n", TINY.replace("lr=1e-3\n", "")));
    let o = qdyn(&[
        "train", "--config", s(&blow), "--data", s(&data), "--out", s(&dir.path().join("n.qtf")), "--epochs", "3",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn evaluate_writes_report_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let cfg = write(&dir.path().join("t.cfg"), TINY);
    let ckpt = dir.path().join("m.qtf");
    assert!(qdyn(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--epochs", "1"])
        .status
        .success());
    let report = dir.path().join("r.csv");
    let plots = dir.path().join("plots");
    let o = qdyn(&[
        "evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--report", s(&report), "--plots", s(&plots),
        "--horizon", "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 + 1);
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 4);
    let plot = std::fs::read_to_string(plots.join("traj_0000.plot.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some("t,reference,prediction"));
    assert_eq!(plot.lines().count(), 1 + 11 + 20);
    // idempotent
    let first = text.clone();
    assert!(qdyn(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--report", s(&report), "--horizon", "20"])
        .status
        .success());
    assert_eq!(std::fs::read_to_string(&report).unwrap(), first);
}

#[test]
fn tiny_smoke_run_under_five_minutes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("smoke.cfg"),
        "preset=tiny\npoints=101\nepsilons=0,1\nlambdas=0.05,0.1,0.2,0.3,0.4\nbetas=1,2\nbatch_size=128\nlr=1e-3\nmax_epochs=30\ndeterministic=true\n",
    );
    let data = dir.path().join("data");
    let ckpt = dir.path().join("smoke.qtf");
    let start = Instant::now();
    let o = qdyn(&["generate", "--config", s(&cfg), "--out", s(&data), "--seed", "1"]);
    assert!(o.status.success());
    let o = qdyn(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "{elapsed:?}");
    let log = std::fs::read_to_string(commands::default_log_path(&ckpt)).unwrap();
    assert_eq!(log.lines().count(), 31);
    let c = checkpoint::load(&ckpt).unwrap();
    assert!(c.best_val_mse.is_finite());
    let last: Vec<&str> = log.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "30");
}
