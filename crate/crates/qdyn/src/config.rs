//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! once and unknown keys are rejected, so a typo never silently falls back to
//! a default. `preset=full|tiny` picks the architecture baseline and is
//! applied before the other keys regardless of its position.

use std::path::Path;

use qdyn_core::data::SplitMode;
use qdyn_core::surrogate::SurrogateConfig;
use qdyn_core::trainer::{AdamConfig, TrainPlan};
use qdyn_core::transformer::ModelConfig;

use crate::error::{QdynError, Result};
use crate::fsutil;

/// Parsed `key=value` lines with their 1-based line numbers.
#[derive(Debug, Clone, Default)]
pub struct KeyValues(Vec<(usize, String, String)>);

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| QdynError::parse(path, i + 1, format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(QdynError::parse(path, i + 1, "empty key"));
            }
            if let Some((first, _, _)) = out.iter().find(|(_, key, _)| key == k) {
                return Err(QdynError::parse(
                    path,
                    i + 1,
                    format!("duplicate key {k} (first set on line {first})"),
                ));
            }
            out.push((i + 1, k.to_string(), v.to_string()));
        }
        Ok(Self(out))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, &str)> {
        self.0.iter().map(|(l, k, v)| (*l, k.as_str(), v.as_str()))
    }
}

/// Architecture keys in a fixed order.
pub fn model_pairs(c: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("window", c.window.to_string()),
        ("d_p", c.d_p.to_string()),
        ("n_heads", c.n_heads.to_string()),
        ("d_k", c.d_k.to_string()),
        ("d_v", c.d_v.to_string()),
        ("n_layers", c.n_layers.to_string()),
        ("ffn_hidden", c.ffn_hidden.to_string()),
        ("reduce_dim", c.reduce_dim.to_string()),
        ("fc1", c.fc1.to_string()),
        ("fc2", c.fc2.to_string()),
        ("ln_eps", c.ln_eps.to_string()),
        ("pe_base", c.pe_base.to_string()),
        ("pe_paired", c.pe_paired.to_string()),
        ("dt", c.dt.to_string()),
    ]
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value for {key}: {v:?}"))
}

fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("bad value for {key}: {v:?} (expected true or false)")),
    }
}

fn list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|s| num::<f64>(key, s.trim())).collect()
}

/// Applies one architecture key. `Ok(false)` means the key is not an
/// architecture key.
pub fn set_model_key(c: &mut ModelConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "window" => c.window = num(key, v)?,
        "d_p" => c.d_p = num(key, v)?,
        "n_heads" => c.n_heads = num(key, v)?,
        "d_k" => c.d_k = num(key, v)?,
        "d_v" => c.d_v = num(key, v)?,
        "n_layers" => c.n_layers = num(key, v)?,
        "ffn_hidden" => c.ffn_hidden = num(key, v)?,
        "reduce_dim" => c.reduce_dim = num(key, v)?,
        "fc1" => c.fc1 = num(key, v)?,
        "fc2" => c.fc2 = num(key, v)?,
        "ln_eps" => c.ln_eps = num(key, v)?,
        "pe_base" => c.pe_base = num(key, v)?,
        "pe_paired" => c.pe_paired = flag(key, v)?,
        "dt" => c.dt = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Surrogate parameter grid; every combination becomes one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub omega_cs: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 1.0],
            lambdas: vec![0.05, 0.1, 0.2, 0.3, 0.4],
            omega_cs: vec![1.0],
            betas: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        self.epsilons.len() * self.lambdas.len() * self.omega_cs.len() * self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(epsilon, lambda, omega_c, beta)` with epsilon varying slowest.
    pub fn points(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &e in &self.epsilons {
            for &l in &self.lambdas {
                for &w in &self.omega_cs {
                    for &b in &self.betas {
                        out.push((e, l, w, b));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Stored points per generated trajectory.
    pub points: usize,
    pub val_fraction: f64,
    pub split: SplitMode,
    /// Whole trajectories withheld from training for end-to-end evaluation.
    pub holdout: usize,
    pub plan: TrainPlan,
    pub seed: Option<u64>,
    pub surrogate: SurrogateConfig,
    pub grid: Grid,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::full(),
            points: 201,
            val_fraction: 0.2,
            split: SplitMode::BySample,
            holdout: 0,
            plan: TrainPlan::default(),
            seed: None,
            surrogate: SurrogateConfig::default(),
            grid: Grid::default(),
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text, path)?;
        let mut cfg = RunConfig::default();
        if let Some((line, _, v)) = kv.iter().find(|(_, k, _)| *k == "preset") {
            cfg.model = match v {
                "full" => ModelConfig::full(),
                "tiny" => ModelConfig::tiny(),
                _ => {
                    return Err(QdynError::parse(
                        path,
                        line,
                        format!("preset must be full or tiny, got {v:?}"),
                    ))
                }
            };
        }
        for (line, k, v) in kv.iter() {
            cfg.apply(k, v).map_err(|m| QdynError::parse(path, line, m))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_text(path)?, path)
    }

    fn apply(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        if set_model_key(&mut self.model, key, v)? {
            return Ok(());
        }
        match key {
            "preset" => {}
            "points" => self.points = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "split" => {
                self.split = SplitMode::parse(v)
                    .ok_or_else(|| format!("split must be sample or trajectory, got {v:?}"))?
            }
            "holdout" => self.holdout = num(key, v)?,
            "batch_size" => self.plan.batch_size = num(key, v)?,
            "max_epochs" => self.plan.max_epochs = num(key, v)?,
            "deterministic" => self.plan.deterministic = flag(key, v)?,
            "lr" => self.plan.adam.lr = num(key, v)?,
            "beta1" => self.plan.adam.beta1 = num(key, v)?,
            "beta2" => self.plan.adam.beta2 = num(key, v)?,
            "adam_eps" => self.plan.adam.eps = num(key, v)?,
            "seed" => self.seed = Some(num(key, v)?),
            "gamma_scale" => self.surrogate.gamma_scale = num(key, v)?,
            "dephasing_scale" => self.surrogate.dephasing_scale = num(key, v)?,
            "substeps" => self.surrogate.substeps = num(key, v)?,
            "noise" => self.surrogate.noise = num(key, v)?,
            "epsilons" => self.grid.epsilons = list(key, v)?,
            "lambdas" => self.grid.lambdas = list(key, v)?,
            "omega_cs" => self.grid.omega_cs = list(key, v)?,
            "betas" => self.grid.betas = list(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: String| Err(QdynError::Usage(m));
        if self.points < self.model.window + 1 {
            return fail(format!(
                "points={} is too short for window={}",
                self.points, self.model.window
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.plan.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.surrogate.substeps == 0 || !(self.surrogate.noise >= 0.0) {
            return fail("substeps must be positive and noise non-negative".into());
        }
        if self.jobs == 0 {
            return fail("jobs must be at least 1".into());
        }
        Ok(())
    }

    /// Renders every key; parsing the result reproduces `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in model_pairs(&self.model) {
            s.push_str(&format!("{k}={v}\n"));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.plan.adam;
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let rest = [
            ("points", self.points.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("split", self.split.as_str().to_string()),
            ("holdout", self.holdout.to_string()),
            ("batch_size", self.plan.batch_size.to_string()),
            ("max_epochs", self.plan.max_epochs.to_string()),
            ("deterministic", self.plan.deterministic.to_string()),
            ("lr", lr.to_string()),
            ("beta1", beta1.to_string()),
            ("beta2", beta2.to_string()),
            ("adam_eps", eps.to_string()),
            ("gamma_scale", self.surrogate.gamma_scale.to_string()),
            ("dephasing_scale", self.surrogate.dephasing_scale.to_string()),
            ("substeps", self.surrogate.substeps.to_string()),
            ("noise", self.surrogate.noise.to_string()),
            ("epsilons", join(&self.grid.epsilons)),
            ("lambdas", join(&self.grid.lambdas)),
            ("omega_cs", join(&self.grid.omega_cs)),
            ("betas", join(&self.grid.betas)),
            ("jobs", self.jobs.to_string()),
        ];
        for (k, v) in rest {
            s.push_str(&format!("{k}={v}\n"));
        }
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed={seed}\n"));
        }
        s
    }
}
