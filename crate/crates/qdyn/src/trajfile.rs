//! Text trajectory files.
//!
//! ```text
//! #epsilon=0
//! #delta=1
//! #lambda=0.1
//! #omega_c=1
//! #beta=1
//! #dt=0.1
//! #source=surrogate
//! 0.0000000000000000e0,1.0000000000000000e0
//! 1.0000000000000001e-1,9.8006657784124163e-1
//! ```
//!
//! Header keys beyond the required ones are kept verbatim. Numbers carry 17
//! significant digits so that every `f64` survives a round trip.

use std::collections::BTreeMap;
use std::path::Path;

use qdyn_core::data::{Source, Trajectory, TrajectoryMeta};

use crate::error::{QdynError, Result};
use crate::fsutil;

pub const REQUIRED_KEYS: [&str; 7] = ["epsilon", "delta", "lambda", "omega_c", "beta", "dt", "source"];

/// A trajectory plus any extra header keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub trajectory: Trajectory,
    pub extra: BTreeMap<String, String>,
}

impl From<Trajectory> for TrajectoryFile {
    fn from(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            extra: BTreeMap::new(),
        }
    }
}

pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render(file: &TrajectoryFile) -> String {
    let t = &file.trajectory;
    let m = &t.meta;
    let mut out = String::with_capacity(64 * (t.len() + 8));
    for (k, v) in [
        ("epsilon", m.epsilon),
        ("delta", m.delta),
        ("lambda", m.lambda),
        ("omega_c", m.omega_c),
        ("beta", m.beta),
        ("dt", t.dt),
    ] {
        out.push_str(&format!("#{k}={v}\n"));
    }
    out.push_str(&format!("#source={}\n", m.source.as_str()));
    for (k, v) in &file.extra {
        out.push_str(&format!("#{k}={v}\n"));
    }
    for (time, value) in t.times.iter().zip(&t.values) {
        out.push_str(&format_real(*time));
        out.push(',');
        out.push_str(&format_real(*value));
        out.push('\n');
    }
    out
}

/// Parses file content; `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<TrajectoryFile> {
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if !times.is_empty() {
                return Err(QdynError::parse(path, line_no, "header line after data"));
            }
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| QdynError::parse(path, line_no, format!("expected #key=value, got {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if header.insert(k.clone(), v).is_some() {
                return Err(QdynError::parse(path, line_no, format!("duplicate key {k}")));
            }
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| QdynError::parse(path, line_no, format!("expected time,value, got {line:?}")))?;
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| QdynError::parse(path, line_no, format!("not a number: {s:?}")))?;
            if !v.is_finite() {
                return Err(QdynError::parse(path, line_no, format!("non-finite number {s:?}")));
            }
            Ok(v)
        };
        times.push(num(a)?);
        values.push(num(b)?);
    }

    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .copied()
        .filter(|k| !header.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(QdynError::parse(
            path,
            0,
            format!("missing header keys: {}", missing.join(", ")),
        ));
    }
    let real = |k: &str| -> Result<f64> {
        header[k]
            .parse::<f64>()
            .map_err(|_| QdynError::parse(path, 0, format!("header {k}={:?} is not a number", header[k])))
    };
    let source = Source::parse(&header["source"])
        .ok_or_else(|| QdynError::parse(path, 0, format!("unknown source {:?}", header["source"])))?;
    let meta = TrajectoryMeta {
        epsilon: real("epsilon")?,
        delta: real("delta")?,
        lambda: real("lambda")?,
        omega_c: real("omega_c")?,
        beta: real("beta")?,
        source,
    };
    let trajectory = Trajectory {
        meta,
        dt: real("dt")?,
        times,
        values,
    };
    if trajectory.is_empty() {
        return Err(QdynError::parse(path, 0, "no data rows"));
    }
    trajectory
        .validate()
        .map_err(|e| QdynError::parse(path, 0, e.to_string()))?;
    let extra = header
        .into_iter()
        .filter(|(k, _)| !REQUIRED_KEYS.contains(&k.as_str()))
        .collect();
    Ok(TrajectoryFile { trajectory, extra })
}

pub fn load(path: &Path) -> Result<TrajectoryFile> {
    parse(&fsutil::read_text(path)?, path)
}

pub fn save(path: &Path, file: &TrajectoryFile) -> Result<()> {
    fsutil::write_atomic(path, render(file).as_bytes())
}
