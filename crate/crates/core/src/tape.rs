//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation evaluates eagerly and appends a node to the tape, so node
//! order is a topological order by construction. [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints; trainable leaves registered
//! with [`Tape::param`] are reported by name.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{dot, ParamSet};
use crate::{Error, Result, Tensor};

/// Parameter gradients keyed by parameter name.
pub type Gradients = ParamSet;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    BlockMatMulNt(Var, Var, usize),
    BlockMatMul(Var, Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|(n, _)| *n != name),
            "duplicate parameter {name}"
        );
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name, v));
        v
    }

    /// Records a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Variable registered under `name`, if any.
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Broadcast addition of a 1×n row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        let rg = self.tracked(a) || self.tracked(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let rg = self.tracked(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        let rg = self.tracked(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.tracked(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let rg = self.tracked(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (value, xhat, inv_std) =
            self.value(x)
                .layer_norm_parts(self.value(gamma), self.value(beta), eps)?;
        let rg = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(value, op, rg))
    }

    /// See [`Tensor::block_matmul_nt`].
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, block: usize) -> Result<Var> {
        let value = self.value(a).block_matmul_nt(self.value(b), block)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::BlockMatMulNt(a, b, block), rg))
    }

    /// See [`Tensor::block_matmul`].
    pub fn block_matmul(&mut self, w: Var, v: Var, block: usize) -> Result<Var> {
        let value = self.value(w).block_matmul(self.value(v), block)?;
        let rg = self.tracked(w) || self.tracked(v);
        Ok(self.push(value, Op::BlockMatMul(w, v, block), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(rows, cols)?;
        let rg = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.tracked(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
        let rg = self.tracked(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.clone()), rg))
    }

    /// Reverse sweep from a scalar `loss`. Every registered parameter gets an
    /// entry; parameters the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            adj[idx] = Some(g);
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = adj[v.0]
                .take()
                .unwrap_or_else(|| {
                    let (r, c) = self.value(*v).shape();
                    Tensor::zeros(r, c)
                });
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let mut send = |v: Var, contrib: Tensor| -> Result<()> {
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => {
                    *slot = Some(contrib);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    send(*a, g.matmul_nt(self.value(*b))?)?;
                }
                if self.tracked(*b) {
                    send(*b, self.value(*a).matmul_tn(g)?)?;
                }
            }
            Op::Add(a, b) => {
                if self.tracked(*a) {
                    send(*a, g.clone())?;
                }
                if self.tracked(*b) {
                    send(*b, g.clone())?;
                }
            }
            Op::AddRow(a, bias) => {
                if self.tracked(*a) {
                    send(*a, g.clone())?;
                }
                if self.tracked(*bias) {
                    send(*bias, g.sum_rows())?;
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    send(*a, g.hadamard(self.value(*b))?)?;
                }
                if self.tracked(*b) {
                    send(*b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, f) => send(*a, g.scale(*f))?,
            Op::Tanh(a) => {
                let mut d = g.clone();
                for (dv, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv *= 1.0 - y * y;
                }
                send(*a, d)?;
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (dv, x) in d.data_mut().iter_mut().zip(self.value(*a).data()) {
                    if *x <= 0.0 {
                        *dv = 0.0;
                    }
                }
                send(*a, d)?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut d = g.clone();
                for (dr, yr) in d.data_mut().chunks_exact_mut(n).zip(y.data().chunks_exact(n)) {
                    let inner = dot(dr, yr);
                    for (dv, yv) in dr.iter_mut().zip(yr) {
                        *dv = yv * (*dv - inner);
                    }
                }
                send(*a, d)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = xhat.cols();
                if self.tracked(*gamma) {
                    send(*gamma, g.hadamard(xhat)?.sum_rows())?;
                }
                if self.tracked(*beta) {
                    send(*beta, g.sum_rows())?;
                }
                if self.tracked(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = g.clone();
                    let inv_n = 1.0 / n as f64;
                    for ((dr, xr), s) in dx
                        .data_mut()
                        .chunks_exact_mut(n)
                        .zip(xhat.data().chunks_exact(n))
                        .zip(inv_std)
                    {
                        for (dv, gv) in dr.iter_mut().zip(gam) {
                            *dv *= gv;
                        }
                        let mean_d = dr.iter().sum::<f64>() * inv_n;
                        let mean_dx = dot(dr, xr) * inv_n;
                        for (dv, xv) in dr.iter_mut().zip(xr) {
                            *dv = s * (*dv - mean_d - xv * mean_dx);
                        }
                    }
                    send(*x, dx)?;
                }
            }
            Op::BlockMatMulNt(a, b, block) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, d, blk) = (av.rows(), av.cols(), *block);
                if self.tracked(*a) {
                    let mut da = vec![0.0; rows * d];
                    for base in (0..rows).step_by(blk) {
                        for i in 0..blk {
                            let dst = &mut da[(base + i) * d..(base + i + 1) * d];
                            for j in 0..blk {
                                let w = g.get(base + i, j);
                                for (o, bb) in dst.iter_mut().zip(bv.row(base + j)) {
                                    *o += w * bb;
                                }
                            }
                        }
                    }
                    send(*a, Tensor::new(rows, d, da)?)?;
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; rows * d];
                    for base in (0..rows).step_by(blk) {
                        for j in 0..blk {
                            let dst = &mut db[(base + j) * d..(base + j + 1) * d];
                            for i in 0..blk {
                                let w = g.get(base + i, j);
                                for (o, aa) in dst.iter_mut().zip(av.row(base + i)) {
                                    *o += w * aa;
                                }
                            }
                        }
                    }
                    send(*b, Tensor::new(rows, d, db)?)?;
                }
            }
            Op::BlockMatMul(w, v, block) => {
                let (wv, vv) = (self.value(*w), self.value(*v));
                let (rows, d, blk) = (vv.rows(), vv.cols(), *block);
                if self.tracked(*w) {
                    let mut dw = vec![0.0; rows * blk];
                    for base in (0..rows).step_by(blk) {
                        for i in 0..blk {
                            for j in 0..blk {
                                dw[(base + i) * blk + j] = dot(g.row(base + i), vv.row(base + j));
                            }
                        }
                    }
                    send(*w, Tensor::new(rows, blk, dw)?)?;
                }
                if self.tracked(*v) {
                    let mut dv = vec![0.0; rows * d];
                    for base in (0..rows).step_by(blk) {
                        for i in 0..blk {
                            let gi = g.row(base + i);
                            for j in 0..blk {
                                let weight = wv.get(base + i, j);
                                let dst = &mut dv[(base + j) * d..(base + j + 1) * d];
                                for (o, gg) in dst.iter_mut().zip(gi) {
                                    *o += weight * gg;
                                }
                            }
                        }
                    }
                    send(*v, Tensor::new(rows, d, dv)?)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    if self.tracked(*p) {
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        send(*p, Tensor::new(rows, cols, data)?)?;
                    }
                    offset += cols;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, g.reshape(r, c)?)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Tensor::filled(r, c, g.item()?))?;
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let factor = 2.0 * g.item()? / p.len() as f64;
                send(*pred, p.sub(target)?.scale(factor))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_relative_error};

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param("W", Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]).unwrap());
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g["W"], Tensor::ones(2, 2));
    }

    #[test]
    fn half_square_gradient_is_identity_map() {
        let w0 = Tensor::from_rows(&[&[1.0, -2.0, 0.25]]).unwrap();
        let mut tape = Tape::new();
        let w = tape.param("W", w0.clone());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        assert_eq!(tape.backward(loss).unwrap()["W"], w0);
    }

    #[test]
    fn unused_parameter_gets_zeros() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::ones(1, 2));
        tape.param("unused", Tensor::ones(3, 1));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g["unused"], Tensor::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::ones(1, 2));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    fn toy(params: &ParamSet) -> (Tape, Var) {
        // Block attention over two sequences of length 3, every primitive on
        // the path to a scalar.
        let mut tape = Tape::new();
        let vars: alloc::collections::BTreeMap<&str, Var> = params
            .iter()
            .map(|(k, v)| (k.as_str(), tape.param(k.clone(), v.clone())))
            .collect();
        let x = vars["x"];
        let q = tape.matmul(x, vars["wq"]).unwrap();
        let q = tape.add_row(q, vars["bq"]).unwrap();
        let k = tape.matmul(x, vars["wk"]).unwrap();
        let s = tape.block_matmul_nt(q, k, 3).unwrap();
        let s = tape.scale(s, 0.7);
        let a = tape.softmax_rows(s);
        let z = tape.block_matmul(a, x, 3).unwrap();
        let z2 = tape.tanh(z);
        let cat = tape.concat_cols(&[z, z2]).unwrap();
        let n = tape.layer_norm(cat, vars["gamma"], vars["beta"], 1e-3).unwrap();
        let r = tape.relu(n);
        let flat = tape.reshape(r, 1, 24).unwrap();
        let h = tape.matmul(flat, vars["wout"]).unwrap();
        let target = Tensor::row_vector(&[0.3, -0.2]).unwrap();
        let loss = tape.mse(h, &target).unwrap();
        (tape, loss)
    }

    #[test]
    fn primitives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut rand_t = |r: usize, c: usize| {
            Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let mut params = ParamSet::new();
        params.insert("x".into(), rand_t(6, 2));
        params.insert("wq".into(), rand_t(2, 2));
        params.insert("bq".into(), rand_t(1, 2));
        params.insert("wk".into(), rand_t(2, 2));
        params.insert("gamma".into(), rand_t(1, 4));
        params.insert("beta".into(), rand_t(1, 4));
        params.insert("wout".into(), rand_t(24, 2));

        let (tape, loss) = toy(&params);
        let analytic = tape.backward(loss).unwrap();
        let numeric = finite_diff_grad(
            |p| {
                let (t, l) = toy(p);
                t.value(l).item().unwrap()
            },
            &params,
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-6, "max relative error {err}");
    }
}
