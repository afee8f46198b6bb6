//! Real-NVP normalizing flow: a stack of affine coupling layers over a
//! standard-normal base, with exact log-likelihood, sampling and
//! maximum-likelihood training.
//!
//! Each coupling layer keeps `d = floor(D/2)` coordinates fixed and maps the
//! remaining ones as `y = x * exp(s(x_fixed)) + t(x_fixed)`. Consecutive layers
//! swap which end of the vector is held fixed. Inputs are standardized per
//! dimension before the first layer; that affine map's log-determinant is part
//! of every density.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{read_params, write_params, Activation, Mlp, MlpSpec, Optimizer, OptimizerKind, Tape};
use crate::error::{Error, Result};

/// Log-scales are squashed to `(-S_BOUND, S_BOUND)` with `S_BOUND * tanh(raw / S_BOUND)`.
pub const S_BOUND: f64 = 5.0;

/// Lower bound on the per-dimension standardization scale.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub n_layers: usize,
    pub hidden: Vec<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    dim: usize,
    pass_dim: usize,
    /// `false`: the leading `pass_dim` coordinates pass through; `true`: the trailing ones.
    parity: bool,
    s_net: Mlp,
    t_net: Mlp,
}

struct LayerTape {
    cond: Vec<f64>,
    s_tape: Tape,
    t_tape: Tape,
    x_trans: Vec<f64>,
    s: Vec<f64>,
    squash: Vec<f64>,
}

impl LayerTape {
    fn new() -> Self {
        Self {
            cond: Vec::new(),
            s_tape: Tape::default(),
            t_tape: Tape::default(),
            x_trans: Vec::new(),
            s: Vec::new(),
            squash: Vec::new(),
        }
    }
}

impl CouplingLayer {
    fn new<R: Rng + ?Sized>(dim: usize, parity: bool, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let pass_dim = dim / 2;
        let cond_dim = pass_dim.max(1);
        let spec = MlpSpec::with_hidden(cond_dim, hidden, dim - pass_dim, Activation::Identity)?;
        Ok(Self {
            dim,
            pass_dim,
            parity,
            s_net: Mlp::init(spec.clone(), rng),
            t_net: Mlp::init(spec, rng),
        })
    }

    pub fn pass_dim(&self) -> usize {
        self.pass_dim
    }

    pub fn parity(&self) -> bool {
        self.parity
    }

    pub fn s_net(&self) -> &Mlp {
        &self.s_net
    }

    pub fn s_net_mut(&mut self) -> &mut Mlp {
        &mut self.s_net
    }

    pub fn t_net(&self) -> &Mlp {
        &self.t_net
    }

    pub fn t_net_mut(&mut self) -> &mut Mlp {
        &mut self.t_net
    }

    fn pass_range(&self) -> std::ops::Range<usize> {
        if self.parity {
            self.dim - self.pass_dim..self.dim
        } else {
            0..self.pass_dim
        }
    }

    fn trans_range(&self) -> std::ops::Range<usize> {
        if self.parity {
            0..self.dim - self.pass_dim
        } else {
            self.pass_dim..self.dim
        }
    }

    /// Conditioner input; a one-dimensional flow conditions on the constant 1.
    fn cond_input(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.pass_dim == 0 {
            out.push(1.0);
        } else {
            out.extend_from_slice(&v[self.pass_range()]);
        }
    }

    fn params_len(&self) -> usize {
        self.s_net.params().len() + self.t_net.params().len()
    }

    /// In-place forward map; returns the log-determinant `sum(s)`.
    fn forward_inplace(&self, v: &mut [f64], tape: &mut LayerTape) -> Result<f64> {
        self.cond_input(v, &mut tape.cond);
        self.s_net.forward_tape(&tape.cond, &mut tape.s_tape)?;
        self.t_net.forward_tape(&tape.cond, &mut tape.t_tape)?;
        let raw = tape.s_tape.output();
        let t = tape.t_tape.output();
        tape.s.clear();
        tape.squash.clear();
        tape.x_trans.clear();
        let mut log_det = 0.0;
        for (j, i) in self.trans_range().enumerate() {
            let th = (raw[j] / S_BOUND).tanh();
            let s = S_BOUND * th;
            tape.s.push(s);
            tape.squash.push(1.0 - th * th);
            tape.x_trans.push(v[i]);
            v[i] = v[i] * s.exp() + t[j];
            log_det += s;
        }
        Ok(log_det)
    }

    fn inverse_inplace(&self, v: &mut [f64]) -> Result<()> {
        let mut cond = Vec::new();
        self.cond_input(v, &mut cond);
        let raw = self.s_net.forward(&cond)?;
        let t = self.t_net.forward(&cond)?;
        for (j, i) in self.trans_range().enumerate() {
            let s = S_BOUND * (raw[j] / S_BOUND).tanh();
            v[i] = (v[i] - t[j]) * (-s).exp();
        }
        Ok(())
    }

    /// Backpropagates `g` (d loss / d output) through the layer, where the loss
    /// also carries `-log_det`. Overwrites `g` with d loss / d input and
    /// accumulates parameter gradients into `grad` (`[s_net | t_net]`).
    fn backward(&self, tape: &LayerTape, g: &mut [f64], grad: &mut [f64]) -> Result<()> {
        let n_s = self.s_net.params().len();
        let (g_s_params, g_t_params) = grad.split_at_mut(n_s);
        let trans = self.trans_range();
        let mut g_raw = Vec::with_capacity(trans.len());
        let mut g_t = Vec::with_capacity(trans.len());
        for (j, i) in trans.clone().enumerate() {
            let es = tape.s[j].exp();
            let gy = g[i];
            g_t.push(gy);
            let g_s = gy * tape.x_trans[j] * es - 1.0;
            g_raw.push(g_s * tape.squash[j]);
            g[i] = gy * es;
        }
        let c_s = self.s_net.backward(&tape.s_tape, &g_raw, g_s_params)?;
        let c_t = self.t_net.backward(&tape.t_tape, &g_t, g_t_params)?;
        if self.pass_dim > 0 {
            for (j, i) in self.pass_range().enumerate() {
                g[i] += c_s[j] + c_t[j];
            }
        }
        Ok(())
    }
}

/// Composition of coupling layers with a standard-normal base density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    dim: usize,
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FlowModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, config: FlowConfig, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("flow dimension must be positive".into()));
        }
        if config.n_layers == 0 {
            return Err(Error::InvalidConfig("flow needs at least one coupling layer".into()));
        }
        let layers = (0..config.n_layers)
            .map(|l| CouplingLayer::new(dim, l % 2 == 1, &config.hidden, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            dim,
            layers,
            config,
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        })
    }

    /// Every `s` and `t` net emits 0, so the flow is the identity map.
    pub fn identity<R: Rng + ?Sized>(dim: usize, config: FlowConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(dim, config, rng)?;
        for layer in &mut m.layers {
            layer.s_net.zero_output_layer();
            layer.t_net.zero_output_layer();
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.scale)
    }

    pub fn set_standardization(&mut self, mean: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        if mean.len() != self.dim || scale.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mean.len().min(scale.len()),
            });
        }
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("standardization scales must be positive".into()));
        }
        self.mean = mean;
        self.scale = scale;
        Ok(())
    }

    /// Sets mean / `max(std, SCALE_FLOOR)` from the rows of `data`.
    pub fn standardize_from(&mut self, data: &[Vec<f64>]) -> Result<()> {
        let (mean, scale) = column_stats(data, self.dim)?;
        self.set_standardization(mean, scale)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CouplingLayer::params_len).sum()
    }

    /// All network parameters, layer by layer as `[s_net | t_net]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(l.s_net.params());
            p.extend_from_slice(l.t_net.params());
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.s_net.params().len();
            l.s_net.set_params(&params[off..off + n])?;
            off += n;
            let n = l.t_net.params().len();
            l.t_net.set_params(&params[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.into()));
        }
        Ok(())
    }

    fn standardization_log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// `z = F(x)` and `log |det dF/dx|`, standardization included.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(x, "flow input")?;
        let mut v: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect();
        let mut log_det = self.standardization_log_det();
        let mut tape = LayerTape::new();
        for layer in &self.layers {
            log_det += layer.forward_inplace(&mut v, &mut tape)?;
        }
        if v.iter().any(|z| !z.is_finite()) || !log_det.is_finite() {
            return Err(Error::NonFinite("flow forward pass".into()));
        }
        Ok((v, log_det))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z, "flow inverse input")?;
        let mut v = z.to_vec();
        for layer in self.layers.iter().rev() {
            layer.inverse_inplace(&mut v)?;
        }
        for ((v, m), s) in v.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = *v * s + m;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow inverse pass".into()));
        }
        Ok(v)
    }

    /// `-(D/2) ln(2 pi) - |F(x)|^2 / 2 + log |det dF/dx|`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det) = self.forward(x)?;
        Ok(base_log_density(&z) + log_det)
    }

    pub fn mean_log_prob(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("data"));
        }
        let mut total = 0.0;
        for x in data {
            total += self.log_prob(x)?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.sample_scaled(n, 1.0, rng)
    }

    /// Samples with base draws `z = temperature * N(0, I)`; temperature 0 maps the base mode.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, n: usize, temperature: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.dim)
                    .map(|_| temperature * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                self.inverse(&z)
            })
            .collect()
    }

    /// Mean negative log-likelihood over `batch` and its gradient with respect to [`FlowModel::params`].
    pub fn nll_and_grad(&self, batch: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.params_len();
        }
        let mut tapes: Vec<LayerTape> = (0..self.layers.len()).map(|_| LayerTape::new()).collect();
        let log_det_std = self.standardization_log_det();
        let mut total = 0.0;
        for x in batch {
            self.check_input(x, "training sample")?;
            let mut v: Vec<f64> =
                x.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect();
            let mut log_det = log_det_std;
            for (layer, tape) in self.layers.iter().zip(tapes.iter_mut()) {
                log_det += layer.forward_inplace(&mut v, tape)?;
            }
            let nll = -(base_log_density(&v) + log_det);
            if !nll.is_finite() {
                return Err(Error::NonFinite("negative log-likelihood".into()));
            }
            total += nll;
            // d nll / d z = z; the -log_det terms enter inside each layer's backward
            let mut g = v;
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let n = layer.params_len();
                layer.backward(&tapes[l], &mut g, &mut grad[offsets[l]..offsets[l] + n])?;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
        Ok((total * inv, grad))
    }

    /// Maximum-likelihood training by shuffled minibatches. Standardization is
    /// refreshed from `data` first. Returns the mean log-likelihood of each epoch
    /// (averaged over its minibatches, evaluated before each update).
    pub fn fit<R: Rng + ?Sized>(&mut self, data: &[Vec<f64>], opts: &FitOptions, rng: &mut R) -> Result<Vec<f64>> {
        if opts.batch_size == 0 || data.len() < opts.batch_size {
            return Err(Error::TooFewSamples {
                needed: opts.batch_size.max(1),
                got: data.len(),
            });
        }
        self.standardize_from(data)?;
        let mut opt = Optimizer::new(opts.optimizer, self.param_count());
        let mut params = self.params();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(opts.epochs);
        let mut batch: Vec<Vec<f64>> = Vec::with_capacity(opts.batch_size);
        for epoch in 0..opts.epochs {
            order.shuffle(rng);
            let mut sum = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(opts.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i].clone()));
                let (nll, grad) = self.nll_and_grad(&batch).map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
                opt.step(&mut params, &grad, opts.lr).map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
                self.set_params(&params)?;
                sum += -nll * chunk.len() as f64;
                count += chunk.len();
            }
            curve.push(sum / count as f64);
        }
        Ok(curve)
    }

    /// `steps` minibatch updates with batches drawn uniformly with replacement
    /// across steps (without replacement inside a batch). Standardization is
    /// refreshed from `data` first. Returns the per-step batch mean log-likelihood.
    pub fn fit_steps<R: Rng + ?Sized>(
        &mut self,
        data: &[Vec<f64>],
        steps: usize,
        opts: &FitOptions,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        self.standardize_from(data)?;
        let batch_size = opts.batch_size.clamp(1, data.len());
        let mut opt = Optimizer::new(opts.optimizer, self.param_count());
        let mut params = self.params();
        let mut curve = Vec::with_capacity(steps);
        for step in 0..steps {
            let batch: Vec<Vec<f64>> = rand::seq::index::sample(rng, data.len(), batch_size)
                .into_iter()
                .map(|i| data[i].clone())
                .collect();
            let (nll, grad) = self.nll_and_grad(&batch).map_err(|e| Error::Diverged {
                epoch: step,
                detail: e.to_string(),
            })?;
            opt.step(&mut params, &grad, opts.lr).map_err(|e| Error::Diverged {
                epoch: step,
                detail: e.to_string(),
            })?;
            self.set_params(&params)?;
            curve.push(-nll);
        }
        Ok(curve)
    }

    /// Writes `<stem>.bin` (parameters) and `<stem>.json` (topology and standardization).
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_params(&stem.with_extension("bin"), &self.params())?;
        let sidecar = FlowSidecar {
            dim: self.dim,
            config: self.config.clone(),
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            layer_specs: self.layers.iter().map(|l| l.s_net.spec().clone()).collect(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let side_path = stem.with_extension("json");
        if !side_path.exists() {
            return Err(Error::MissingFile(side_path));
        }
        let side: FlowSidecar = serde_json::from_str(&fs::read_to_string(&side_path)?)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = FlowModel::new(side.dim, side.config, &mut rng)?;
        model.set_standardization(side.mean, side.scale)?;
        model.set_params(&read_params(&stem.with_extension("bin"))?)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct FlowSidecar {
    dim: usize,
    config: FlowConfig,
    mean: Vec<f64>,
    scale: Vec<f64>,
    layer_specs: Vec<MlpSpec>,
}

/// Writes a training curve as `epoch,mean_loglik`, epochs counted from 1.
pub fn write_fit_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loglik\n");
    for (i, v) in curve.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, v));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Standard-normal log density in `z.len()` dimensions.
pub fn base_log_density(z: &[f64]) -> f64 {
    -0.5 * z.len() as f64 * (2.0 * PI).ln() - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// Per-column mean and `max(sample std, SCALE_FLOOR)`.
pub fn column_stats(data: &[Vec<f64>], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("data"));
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in data {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for row in data {
        for j in 0..dim {
            var[j] += (row[j] - mean[j]).powi(2);
        }
    }
    let denom = (n - 1.0).max(1.0);
    let scale = var.iter().map(|v| (v / denom).sqrt().max(SCALE_FLOOR)).collect();
    Ok((mean, scale))
}
