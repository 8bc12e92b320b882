//! The forecaster: time-aware embedding, a stack of post-norm encoder layers
//! and a dense head that emits the next ⟨σz⟩ value.
//!
//! ```text
//! x, t ──► P + PE ──► [attention ─► +res ─► LN ─► tanh FFN ─► +res ─► LN] × n_layers
//!      ──► per-position linear reduction ──► flatten ──► ReLU fc1 ──► ReLU fc2 ──► out
//! ```
//!
//! Parameters are stored by name in a [`ParamSet`]; the layout is a pure
//! function of [`ModelConfig`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WindowedSample;
use crate::embedding::{embed_on, EncodingConfig};
use crate::{Error, Gradients, ParamSet, Result, Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input window length `T`.
    pub window: usize,
    pub d_p: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_layers: usize,
    pub ffn_hidden: usize,
    pub reduce_dim: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub ln_eps: f64,
    pub pe_base: f64,
    pub pe_paired: bool,
    /// Grid spacing of the series the model was trained on.
    pub dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// The published architecture (1,918,018 trainable scalars).
    pub fn full() -> Self {
        Self {
            window: 41,
            d_p: 64,
            n_heads: 1,
            d_k: 64,
            d_v: 64,
            n_layers: 2,
            ffn_hidden: 1536,
            reduce_dim: 1,
            fc1: 1024,
            fc2: 1408,
            ln_eps: 1e-3,
            pe_base: 1000.0,
            pe_paired: false,
            dt: 0.1,
        }
    }

    /// Desk-scale variant used for quick training runs.
    pub fn tiny() -> Self {
        Self::small(11, 16, 64, 64, 64)
    }

    /// Single-head, two-layer config with the given sizes.
    pub fn small(window: usize, d_p: usize, ffn_hidden: usize, fc1: usize, fc2: usize) -> Self {
        Self {
            window,
            d_p,
            d_k: d_p,
            d_v: d_p,
            ffn_hidden,
            fc1,
            fc2,
            ..Self::full()
        }
    }

    pub fn encoding(&self) -> EncodingConfig {
        EncodingConfig {
            d_p: self.d_p,
            base: self.pe_base,
            paired: self.pe_paired,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("window", self.window),
            ("d_p", self.d_p),
            ("n_heads", self.n_heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("n_layers", self.n_layers),
            ("ffn_hidden", self.ffn_hidden),
            ("reduce_dim", self.reduce_dim),
            ("fc1", self.fc1),
            ("fc2", self.fc2),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_p % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads={} does not divide d_p={}",
                self.n_heads, self.d_p
            )));
        }
        if self.d_k != self.d_p || self.d_v != self.d_p / self.n_heads {
            return Err(Error::Config(format!(
                "need d_k = d_p and d_v = d_p / n_heads, got d_k={} d_v={} d_p={} heads={}",
                self.d_k, self.d_v, self.d_p, self.n_heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        self.encoding().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

impl ParamSpec {
    fn new(name: String, rows: usize, cols: usize, kind: ParamKind) -> Self {
        Self {
            name,
            rows,
            cols,
            kind,
        }
    }
}

/// Projections of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
}

/// One encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub heads: Vec<HeadParams<T>>,
    pub wo: T,
    pub bo: T,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

/// The full parameter tree, generic over what sits at each leaf: a
/// [`ParamSpec`] for the layout, a [`Tensor`] for values, a [`Var`] on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed_w: T,
    pub embed_b: T,
    pub layers: Vec<LayerParams<T>>,
    pub reduce_w: T,
    pub reduce_b: T,
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
    pub out_w: T,
    pub out_b: T,
}

impl<T> HeadParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> HeadParams<U> {
        HeadParams {
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
        }
    }

    fn leaves(&self) -> [&T; 6] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv]
    }
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LayerParams<U> {
        LayerParams {
            heads: self.heads.iter().map(|h| h.map(&mut f)).collect(),
            wo: f(&self.wo),
            bo: f(&self.bo),
            ln1_gamma: f(&self.ln1_gamma),
            ln1_beta: f(&self.ln1_beta),
            ffn_w1: f(&self.ffn_w1),
            ffn_b1: f(&self.ffn_b1),
            ffn_w2: f(&self.ffn_w2),
            ffn_b2: f(&self.ffn_b2),
            ln2_gamma: f(&self.ln2_gamma),
            ln2_beta: f(&self.ln2_beta),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        let mut out: Vec<&T> = self.heads.iter().flat_map(|h| h.leaves()).collect();
        out.extend([
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]);
        out
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            embed_w: f(&self.embed_w),
            embed_b: f(&self.embed_b),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
            reduce_w: f(&self.reduce_w),
            reduce_b: f(&self.reduce_b),
            fc1_w: f(&self.fc1_w),
            fc1_b: f(&self.fc1_b),
            fc2_w: f(&self.fc2_w),
            fc2_b: f(&self.fc2_b),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
        }
    }

    /// Leaves in a fixed traversal order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = alloc::vec![&self.embed_w, &self.embed_b];
        for l in &self.layers {
            out.extend(l.leaves());
        }
        out.extend([
            &self.reduce_w,
            &self.reduce_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.out_w,
            &self.out_b,
        ]);
        out
    }
}

/// Parameter layout for `cfg`: names, shapes and initialization kinds.
pub fn layout(cfg: &ModelConfig) -> ModelParams<ParamSpec> {
    use ParamKind::*;
    let w = |name: String, r, c| ParamSpec::new(name, r, c, Weight);
    let b = |name: String, c| ParamSpec::new(name, 1, c, Bias);
    let d = cfg.d_p;
    let layers = (1..=cfg.n_layers)
        .map(|l| {
            let p = format!("layer{l}");
            LayerParams {
                heads: (0..cfg.n_heads)
                    .map(|h| {
                        let hp = format!("{p}.attn.h{h}");
                        HeadParams {
                            wq: w(format!("{hp}.Wq"), d, cfg.d_k),
                            bq: b(format!("{hp}.bq"), cfg.d_k),
                            wk: w(format!("{hp}.Wk"), d, cfg.d_k),
                            bk: b(format!("{hp}.bk"), cfg.d_k),
                            wv: w(format!("{hp}.Wv"), d, cfg.d_v),
                            bv: b(format!("{hp}.bv"), cfg.d_v),
                        }
                    })
                    .collect(),
                wo: w(format!("{p}.attn.Wo"), cfg.n_heads * cfg.d_v, d),
                bo: b(format!("{p}.attn.bo"), d),
                ln1_gamma: ParamSpec::new(format!("{p}.ln1.gamma"), 1, d, Gamma),
                ln1_beta: ParamSpec::new(format!("{p}.ln1.beta"), 1, d, Beta),
                ffn_w1: w(format!("{p}.ffn.W1"), d, cfg.ffn_hidden),
                ffn_b1: b(format!("{p}.ffn.b1"), cfg.ffn_hidden),
                ffn_w2: w(format!("{p}.ffn.W2"), cfg.ffn_hidden, d),
                ffn_b2: b(format!("{p}.ffn.b2"), d),
                ln2_gamma: ParamSpec::new(format!("{p}.ln2.gamma"), 1, d, Gamma),
                ln2_beta: ParamSpec::new(format!("{p}.ln2.beta"), 1, d, Beta),
            }
        })
        .collect();
    ModelParams {
        embed_w: w("embed.W".into(), 1, d),
        embed_b: b("embed.b".into(), d),
        layers,
        reduce_w: w("reduce.W".into(), d, cfg.reduce_dim),
        reduce_b: b("reduce.b".into(), cfg.reduce_dim),
        fc1_w: w("fc1.W".into(), cfg.window * cfg.reduce_dim, cfg.fc1),
        fc1_b: b("fc1.b".into(), cfg.fc1),
        fc2_w: w("fc2.W".into(), cfg.fc1, cfg.fc2),
        fc2_b: b("fc2.b".into(), cfg.fc2),
        out_w: w("out.W".into(), cfg.fc2, 1),
        out_b: b("out.b".into(), 1),
    }
}

/// Number of trainable scalars. The time encoding contributes none.
pub fn count_params(cfg: &ModelConfig) -> usize {
    layout(cfg).leaves().iter().map(|s| s.rows * s.cols).sum()
}

/// One attention head over stacked windows of `block` rows each. Returns the
/// head output and its post-softmax attention weights.
pub fn attention_head_on(
    tape: &mut Tape,
    x: Var,
    head: &HeadParams<Var>,
    block: usize,
) -> Result<(Var, Var)> {
    let affine = |tape: &mut Tape, w: Var, b: Var| -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    };
    let q = affine(tape, head.wq, head.bq)?;
    let k = affine(tape, head.wk, head.bk)?;
    let v = affine(tape, head.wv, head.bv)?;
    let d_k = tape.value(q).cols() as f64;
    let scores = tape.block_matmul_nt(q, k, block)?;
    let scores = tape.scale(scores, 1.0 / libm::sqrt(d_k));
    let weights = tape.softmax_rows(scores);
    let z = tape.block_matmul(weights, v, block)?;
    Ok((z, weights))
}

/// Concatenated heads projected back to `d_p`. Returns the attention
/// weights of every head alongside.
pub fn multi_head_on(
    tape: &mut Tape,
    x: Var,
    heads: &[HeadParams<Var>],
    wo: Var,
    bo: Var,
    block: usize,
) -> Result<(Var, Vec<Var>)> {
    let mut zs = Vec::with_capacity(heads.len());
    let mut maps = Vec::with_capacity(heads.len());
    for h in heads {
        let (z, a) = attention_head_on(tape, x, h, block)?;
        zs.push(z);
        maps.push(a);
    }
    let cat = tape.concat_cols(&zs)?;
    let out = tape.matmul(cat, wo)?;
    Ok((tape.add_row(out, bo)?, maps))
}

/// Post-norm encoder layer: `A = LN(X + MHA(X))`, `out = LN(A + FFN(A))`.
pub fn transformer_layer_on(
    tape: &mut Tape,
    x: Var,
    layer: &LayerParams<Var>,
    block: usize,
    eps: f64,
) -> Result<(Var, Vec<Var>)> {
    let (attn, maps) = multi_head_on(tape, x, &layer.heads, layer.wo, layer.bo, block)?;
    let res = tape.add(x, attn)?;
    let a = tape.layer_norm(res, layer.ln1_gamma, layer.ln1_beta, eps)?;
    let h = tape.matmul(a, layer.ffn_w1)?;
    let h = tape.add_row(h, layer.ffn_b1)?;
    let h = tape.tanh(h);
    let f = tape.matmul(h, layer.ffn_w2)?;
    let f = tape.add_row(f, layer.ffn_b2)?;
    let res = tape.add(a, f)?;
    Ok((tape.layer_norm(res, layer.ln2_gamma, layer.ln2_beta, eps)?, maps))
}

fn constants(tape: &mut Tape, t: &HeadParams<Tensor>) -> HeadParams<Var> {
    t.map(|w| tape.constant(w.clone()))
}

/// Single-window attention head on plain tensors.
pub fn attention_head(x: &Tensor, head: &HeadParams<Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = constants(&mut tape, head);
    let (z, _) = attention_head_on(&mut tape, xv, &hv, x.rows())?;
    Ok(tape.value(z).clone())
}

/// Single-window multi-head attention on plain tensors.
pub fn multi_head(
    x: &Tensor,
    heads: &[HeadParams<Tensor>],
    wo: &Tensor,
    bo: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv: Vec<_> = heads.iter().map(|h| constants(&mut tape, h)).collect();
    let (wo, bo) = (tape.constant(wo.clone()), tape.constant(bo.clone()));
    let (z, _) = multi_head_on(&mut tape, xv, &hv, wo, bo, x.rows())?;
    Ok(tape.value(z).clone())
}

/// Single-window encoder layer on plain tensors.
pub fn transformer_layer(x: &Tensor, layer: &LayerParams<Tensor>, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let lv = layer.map(|w| tape.constant(w.clone()));
    let (z, _) = transformer_layer_on(&mut tape, xv, &lv, x.rows(), eps)?;
    Ok(tape.value(z).clone())
}

/// Switches for instrumented forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Add the time encoding to the input projection.
    pub positional_encoding: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            positional_encoding: true,
        }
    }
}

/// Everything an instrumented single-window forward pass exposes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: f64,
    /// `X` after embedding.
    pub input: Tensor,
    /// Output of each encoder layer.
    pub layer_outputs: Vec<Tensor>,
    /// Post-softmax weights, `attention[layer][head]`, each `T × T`.
    pub attention: Vec<Vec<Tensor>>,
}

struct Graph {
    input: Var,
    output: Var,
    layer_outputs: Vec<Var>,
    attention: Vec<Vec<Var>>,
}

/// A parameterized forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerForecaster {
    config: ModelConfig,
    params: ParamSet,
}

impl TransformerForecaster {
    /// Glorot-uniform weights, zero biases, unit scales, zero shifts.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in layout(&config).leaves() {
            let t = match spec.kind {
                ParamKind::Weight => {
                    let bound = libm::sqrt(6.0 / (spec.rows + spec.cols) as f64);
                    let data = (0..spec.rows * spec.cols)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Tensor::new(spec.rows, spec.cols, data)?
                }
                ParamKind::Bias | ParamKind::Beta => Tensor::zeros(spec.rows, spec.cols),
                ParamKind::Gamma => Tensor::ones(spec.rows, spec.cols),
            };
            params.insert(spec.name.clone(), t);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing weights; names and shapes must match the layout exactly.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        let specs = specs.leaves();
        for spec in &specs {
            let t = params
                .get(&spec.name)
                .ok_or_else(|| Error::MissingParam(spec.name.clone()))?;
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Shape {
                    op: "from_params",
                    left: (spec.rows, spec.cols),
                    right: t.shape(),
                });
            }
        }
        if params.len() != specs.len() {
            let extra = params
                .keys()
                .find(|k| specs.iter().all(|s| &s.name != *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Contract(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Parameter values arranged as the layout tree.
    pub fn tree(&self) -> ModelParams<Tensor> {
        layout(&self.config).map(|s| self.params[&s.name].clone())
    }

    fn build(
        &self,
        tape: &mut Tape,
        values: &[f64],
        times: &[f64],
        trainable: bool,
        opts: ForwardOptions,
    ) -> Result<Graph> {
        let cfg = &self.config;
        let t = cfg.window;
        if values.len() != times.len() || values.is_empty() || values.len() % t != 0 {
            return Err(Error::Contract(format!(
                "expected windows of length {t}, got {} values and {} times",
                values.len(),
                times.len()
            )));
        }
        let batch = values.len() / t;
        let vars = layout(cfg).map(|s| {
            let value = self.params[&s.name].clone();
            if trainable {
                tape.param(s.name.clone(), value)
            } else {
                tape.constant(value)
            }
        });
        let input = if opts.positional_encoding {
            embed_on(tape, values, times, vars.embed_w, vars.embed_b, &cfg.encoding())?
        } else {
            let x = tape.constant(Tensor::column(values)?);
            let p = tape.matmul(x, vars.embed_w)?;
            tape.add_row(p, vars.embed_b)?
        };
        let mut x = input;
        let mut layer_outputs = Vec::with_capacity(cfg.n_layers);
        let mut attention = Vec::with_capacity(cfg.n_layers);
        for layer in &vars.layers {
            let (y, maps) = transformer_layer_on(tape, x, layer, t, cfg.ln_eps)?;
            layer_outputs.push(y);
            attention.push(maps);
            x = y;
        }
        let r = tape.matmul(x, vars.reduce_w)?;
        let r = tape.add_row(r, vars.reduce_b)?;
        let flat = tape.reshape(r, batch, t * cfg.reduce_dim)?;
        let h = tape.matmul(flat, vars.fc1_w)?;
        let h = tape.add_row(h, vars.fc1_b)?;
        let h = tape.relu(h);
        let h = tape.matmul(h, vars.fc2_w)?;
        let h = tape.add_row(h, vars.fc2_b)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, vars.out_w)?;
        let output = tape.add_row(o, vars.out_b)?;
        Ok(Graph {
            input,
            output,
            layer_outputs,
            attention,
        })
    }

    /// Predicted value at the grid point after the window.
    pub fn forward(&self, values: &[f64], times: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, values, times, false, ForwardOptions::default())?;
        tape.value(g.output).item()
    }

    /// Forward pass over windows stacked back to back (`B·T` values). Each
    /// prediction is bitwise identical to the single-window [`forward`].
    ///
    /// [`forward`]: Self::forward
    pub fn forward_stacked(&self, values: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, values, times, false, ForwardOptions::default())?;
        Ok(tape.value(g.output).data().to_vec())
    }

    /// Batched prediction for slices of samples.
    pub fn predict_samples(&self, samples: &[WindowedSample]) -> Result<Vec<f64>> {
        let (values, times) = stack(samples.iter());
        self.forward_stacked(&values, &times)
    }

    pub fn forward_traced(
        &self,
        values: &[f64],
        times: &[f64],
        opts: ForwardOptions,
    ) -> Result<ForwardTrace> {
        if values.len() != self.config.window {
            return Err(Error::Contract(format!(
                "traced forward takes one window of {}, got {}",
                self.config.window,
                values.len()
            )));
        }
        let mut tape = Tape::new();
        let g = self.build(&mut tape, values, times, false, opts)?;
        Ok(ForwardTrace {
            output: tape.value(g.output).item()?,
            input: tape.value(g.input).clone(),
            layer_outputs: g.layer_outputs.iter().map(|&v| tape.value(v).clone()).collect(),
            attention: g
                .attention
                .iter()
                .map(|maps| maps.iter().map(|&v| tape.value(v).clone()).collect())
                .collect(),
        })
    }

    /// Batch-mean squared error and its gradient for every parameter.
    pub fn loss_and_grad<'a, I>(&self, batch: I) -> Result<(f64, Gradients)>
    where
        I: IntoIterator<Item = &'a WindowedSample>,
    {
        let batch: Vec<&WindowedSample> = batch.into_iter().collect();
        let (values, times) = stack(batch.iter().copied());
        let labels: Vec<f64> = batch.iter().map(|s| s.y).collect();
        let mut tape = Tape::new();
        let g = self.build(&mut tape, &values, &times, true, ForwardOptions::default())?;
        let loss = tape.mse(g.output, &Tensor::column(&labels)?)?;
        let value = tape.value(loss).item()?;
        Ok((value, tape.backward(loss)?))
    }
}

fn stack<'a>(samples: impl Iterator<Item = &'a WindowedSample>) -> (Vec<f64>, Vec<f64>) {
    let mut values = Vec::new();
    let mut times = Vec::new();
    for s in samples {
        values.extend_from_slice(&s.x);
        times.extend_from_slice(&s.t);
    }
    (values, times)
}
