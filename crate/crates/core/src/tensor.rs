//! Dense row-major `f64` matrices.
//!
//! Everything in the forecaster is at most rank two: sequence × feature
//! activations, weight matrices and row-vector biases. Batches are stacked
//! along the row axis.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Named collection of tensors, ordered by name.
pub type ParamSet = BTreeMap<String, Tensor>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(alloc::format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Contract(alloc::format!(
                "tensor {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Scalar value of a 1×1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "item",
                left: self.shape(),
                right: (1, 1),
            });
        }
        Ok(self.data[0])
    }

    /// Same data, new row-major shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(),
                right: (rows, cols),
            });
        }
        Self::new(rows, cols, self.data.clone())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Standard product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * n];
        // Column tiles of LANES accumulators stay in registers across the
        // inner dimension. Each entry is still summed over p in order.
        const LANES: usize = 8;
        let tiles = n / LANES;
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let c_row = &mut out[i * n..(i + 1) * n];
            for tile in 0..tiles {
                let j0 = tile * LANES;
                let mut acc = [0.0f64; LANES];
                for (p, &a) in a_row.iter().enumerate() {
                    let b = &rhs.data[p * n + j0..p * n + j0 + LANES];
                    for l in 0..LANES {
                        acc[l] += a * b[l];
                    }
                }
                c_row[j0..j0 + LANES].copy_from_slice(&acc);
            }
            for j in tiles * LANES..n {
                let mut acc = 0.0;
                for (p, &a) in a_row.iter().enumerate() {
                    acc += a * rhs.data[p * n + j];
                }
                c_row[j] = acc;
            }
        }
        Self::new(m, n, out)
    }

    /// `self · rhsᵀ`. Summation order matches a row-by-row dot product.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        self.matmul(&rhs.transpose())
    }

    /// `selfᵀ · rhs`. Summation order matches a row-by-row dot product.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        self.transpose().matmul(rhs)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_map(rhs, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        self.check_same(rhs, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds the 1×cols row vector `bias` to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::Shape {
                op: "add_row",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a 1×cols row vector.
    pub fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for row in self.data.chunks_exact(self.cols) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn tanh(&self) -> Self {
        self.map(libm::tanh)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            softmax_in_place(row);
        }
        out
    }

    /// Row-wise normalization to zero mean and unit population variance,
    /// followed by the affine `gamma`/`beta` map.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: f64) -> Result<Self> {
        Ok(self.layer_norm_parts(gamma, beta, eps)?.0)
    }

    /// Layer norm returning `(output, normalized input, 1/σ per row)`.
    pub(crate) fn layer_norm_parts(
        &self,
        gamma: &Self,
        beta: &Self,
        eps: f64,
    ) -> Result<(Self, Self, Vec<f64>)> {
        for p in [gamma, beta] {
            if p.shape() != (1, self.cols) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: self.shape(),
                    right: p.shape(),
                });
            }
        }
        let n = self.cols as f64;
        let mut xhat = self.clone();
        let mut out = self.clone();
        let mut inv_std = Vec::with_capacity(self.rows);
        for (xr, yr) in xhat
            .data
            .chunks_exact_mut(self.cols)
            .zip(out.data.chunks_exact_mut(self.cols))
        {
            let mean = xr.iter().sum::<f64>() / n;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / libm::sqrt(var + eps);
            inv_std.push(s);
            for ((x, y), (g, b)) in xr
                .iter_mut()
                .zip(yr.iter_mut())
                .zip(gamma.data.iter().zip(&beta.data))
            {
                *x = (*x - mean) * s;
                *y = *x * g + b;
            }
        }
        Ok((out, xhat, inv_std))
    }

    fn check_blocks(&self, rhs: &Self, block: usize, op: &'static str) -> Result<()> {
        if block == 0 || self.rows != rhs.rows || self.rows % block != 0 {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(())
    }

    /// Block-diagonal `self · rhsᵀ`: rows are grouped into consecutive blocks
    /// of `block` rows and only rows within the same block interact. The
    /// result has shape `rows × block`.
    pub fn block_matmul_nt(&self, rhs: &Self, block: usize) -> Result<Self> {
        self.check_blocks(rhs, block, "block_matmul_nt")?;
        if self.cols != rhs.cols {
            return Err(Error::Shape {
                op: "block_matmul_nt",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let d = self.cols;
        let mut out = vec![0.0; self.rows * block];
        for base in (0..self.rows).step_by(block) {
            for i in 0..block {
                let a_row = &self.data[(base + i) * d..(base + i + 1) * d];
                for j in 0..block {
                    let b_row = &rhs.data[(base + j) * d..(base + j + 1) * d];
                    out[(base + i) * block + j] = dot(a_row, b_row);
                }
            }
        }
        Self::new(self.rows, block, out)
    }

    /// Block-diagonal product of a `rows × block` weight matrix with a
    /// `rows × d` value matrix: row `i` of block `b` mixes only the value
    /// rows of block `b`.
    pub fn block_matmul(&self, rhs: &Self, block: usize) -> Result<Self> {
        self.check_blocks(rhs, block, "block_matmul")?;
        if self.cols != block {
            return Err(Error::Shape {
                op: "block_matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let d = rhs.cols;
        let mut out = vec![0.0; self.rows * d];
        for base in (0..self.rows).step_by(block) {
            for i in 0..block {
                let w_row = &self.data[(base + i) * block..(base + i + 1) * block];
                let c_row = &mut out[(base + i) * d..(base + i + 1) * d];
                for (j, &w) in w_row.iter().enumerate() {
                    let v_row = &rhs.data[(base + j) * d..(base + j + 1) * d];
                    for (c, &v) in c_row.iter_mut().zip(v_row) {
                        *c += w * v;
                    }
                }
            }
        }
        Self::new(self.rows, d, out)
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Shape {
                op: "concat_cols",
                left: first.shape(),
                right: bad.shape(),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
