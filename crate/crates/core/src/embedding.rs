//! Input stage: `X = P + PE`.
//!
//! `P` is a position-wise affine lift of each scalar ⟨σz⟩ value into `d_p`
//! features. `PE` encodes the time *value* of each position with sines at
//! even feature indices and cosines at odd ones; it is never trained.

use alloc::vec::Vec;

use crate::{Error, Result, Tape, Tensor, Var};

/// Frequency layout of the time encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    pub d_p: usize,
    pub base: f64,
    /// When set, features `2i` and `2i+1` share the frequency
    /// `base^(−2i/d_p)`. Off by default: every feature `k` has its own
    /// frequency `base^(−2k/d_p)`.
    pub paired: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            d_p: 64,
            base: 1000.0,
            paired: false,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_p == 0 || self.d_p % 2 != 0 {
            return Err(Error::Config(alloc::format!(
                "d_p must be even and positive, got {}",
                self.d_p
            )));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "encoding base must exceed 1, got {}",
                self.base
            )));
        }
        Ok(())
    }

    /// ω_k for feature `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        let index = if self.paired { 2 * (k / 2) } else { 2 * k };
        libm::pow(self.base, -(index as f64) / self.d_p as f64)
    }
}

/// `T × d_p` encoding of the given time values.
pub fn positional_encoding(times: &[f64], cfg: &EncodingConfig) -> Result<Tensor> {
    cfg.validate()?;
    if times.is_empty() {
        return Err(Error::Contract("positional encoding of an empty window".into()));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Contract(alloc::format!("non-finite time {t}")));
    }
    let omegas: Vec<f64> = (0..cfg.d_p).map(|k| cfg.frequency(k)).collect();
    let mut data = Vec::with_capacity(times.len() * cfg.d_p);
    for &t in times {
        for (k, &w) in omegas.iter().enumerate() {
            data.push(if k % 2 == 0 {
                libm::sin(t * w)
            } else {
                libm::cos(t * w)
            });
        }
    }
    Tensor::new(times.len(), cfg.d_p, data)
}

/// Row `j` is `x[j] · W + b`.
pub fn project_values(values: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rows() != 1 {
        return Err(Error::Shape {
            op: "project_values",
            left: (values.len(), 1),
            right: weight.shape(),
        });
    }
    Tensor::column(values)?.matmul(weight)?.add_row(bias)
}

/// Model input for one window.
pub fn embed(
    values: &[f64],
    times: &[f64],
    weight: &Tensor,
    bias: &Tensor,
    cfg: &EncodingConfig,
) -> Result<Tensor> {
    check_lengths(values, times)?;
    project_values(values, weight, bias)?.add(&positional_encoding(times, cfg)?)
}

/// Taped [`embed`]. `values` and `times` may hold several windows stacked
/// back to back; the encoding is per time value, so stacking is exact.
pub fn embed_on(
    tape: &mut Tape,
    values: &[f64],
    times: &[f64],
    weight: Var,
    bias: Var,
    cfg: &EncodingConfig,
) -> Result<Var> {
    check_lengths(values, times)?;
    let x = tape.constant(Tensor::column(values)?);
    let p = tape.matmul(x, weight)?;
    let p = tape.add_row(p, bias)?;
    let pe = tape.constant(positional_encoding(times, cfg)?);
    tape.add(p, pe)
}

fn check_lengths(values: &[f64], times: &[f64]) -> Result<()> {
    if values.len() != times.len() {
        return Err(Error::Contract(alloc::format!(
            "{} values but {} times",
            values.len(),
            times.len()
        )));
    }
    Ok(())
}
