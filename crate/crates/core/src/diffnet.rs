//! Dense multilayer perceptrons with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`; layer `l` stores its weights
//! row-major as `[out][in]` followed by its `out` biases. Hidden layers use
//! ReLU, the output layer uses the activation named in the [`MlpSpec`].

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output. ReLU uses 0 at 0.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths from input to output; `widths.len() - 1` affine layers.
    pub widths: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least one layer (two widths)".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(Self { widths, output })
    }

    /// `input -> hidden... -> output` with ReLU hidden layers.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, act: Activation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, act)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output
        } else {
            Activation::Relu
        }
    }
}

/// Post-activation values recorded by [`Mlp::forward_tape`]; `acts[0]` is the input.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.param_count();
        Self {
            spec,
            params: vec![0.0; n],
        }
    }

    /// Kaiming-uniform weights on ReLU layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// on the output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut params = vec![0.0; spec.param_count()];
        let mut off = 0;
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let bound = if l + 1 == spec.n_layers() {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for w in &mut params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Self { spec, params }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Overwrites the bias of the output layer.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let out = self.spec.output_dim();
        if bias.len() != out {
            return Err(Error::DimensionMismatch {
                expected: out,
                got: bias.len(),
            });
        }
        let n = self.params.len();
        self.params[n - out..].copy_from_slice(bias);
        Ok(())
    }

    /// Zeroes the output layer's weights and biases so the net emits a constant 0.
    pub fn zero_output_layer(&mut self) {
        let l = self.spec.n_layers() - 1;
        let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let n = self.params.len();
        for p in &mut self.params[n - fan_in * fan_out - fan_out..] {
            *p = 0.0;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape)?;
        Ok(tape.acts.pop().unwrap())
    }

    /// Forward pass that keeps every layer's output for a later [`Mlp::backward`].
    pub fn forward_tape(&self, x: &[f64], tape: &mut Tape) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.spec.n_layers();
        tape.acts.resize_with(n_layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let act = self.spec.activation(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let z = b[o] + dot(row, input);
                out.push(act.apply(z));
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(())
    }

    /// Reverse pass for the cotangent `upstream` of the taped output.
    /// Parameter gradients are *accumulated* into `grad`; the input gradient is returned.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.spec.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.output_dim(),
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let n_layers = self.spec.n_layers();
        let mut g: Vec<f64> = upstream.to_vec();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            off -= fan_in * fan_out + fan_out;
            let act = self.spec.activation(l);
            let y = &tape.acts[l + 1];
            let x = &tape.acts[l];
            for (gi, &yi) in g.iter_mut().zip(y) {
                *gi *= act.derivative_from_output(yi);
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut gx = vec![0.0; fan_in];
            for o in 0..fan_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += go * x[i];
                    gx[i] += go * row[i];
                }
            }
            g = gx;
        }
        Ok(g)
    }

    /// Gradient of `<upstream, forward(x)>` with respect to the parameters and the input.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape)?;
        let mut gp = vec![0.0; self.params.len()];
        let gx = self.backward(&tape, upstream, &mut gp)?;
        Ok((gp, gx))
    }

    /// Writes `<stem>.bin` (parameters) and `<stem>.json` (the spec).
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_params(&stem.with_extension("bin"), &self.params)?;
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&self.spec)?,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let spec_path = stem.with_extension("json");
        if !spec_path.exists() {
            return Err(Error::MissingFile(spec_path));
        }
        let spec: MlpSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?)?;
        let params = read_params(&stem.with_extension("bin"))?;
        Self::new(spec, params)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Flat parameter file: little-endian `u64` count followed by that many `f64`s.
pub fn write_params(path: &Path, params: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * params.len());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(PathBuf::from(path)));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Parse(format!("{}: truncated header", path.display())));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * n {
        return Err(Error::Parse(format!(
            "{}: header says {n} values, file holds {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// SGD or Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) state for one parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Self {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd, 0)
    }

    pub fn adam(n_params: usize) -> Self {
        Self::new(OptimizerKind::Adam, n_params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One descent step `params <- params - lr * update(grads)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_echoes_input() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Identity).unwrap();
        let net = Mlp::new(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Identity).unwrap();
        let mut params = vec![-1.0; spec.param_count()];
        // output layer: weights 1, bias 0
        let n = params.len();
        params[n - 4..n - 1].fill(1.0);
        params[n - 1] = 0.0;
        let net = Mlp::new(spec, params).unwrap();
        let mut tape = Tape::default();
        net.forward_tape(&[0.5, 0.25], &mut tape).unwrap();
        assert!(tape.acts[1].iter().all(|&h| h == 0.0));
        assert_eq!(tape.output(), &[0.0]);
    }

    #[test]
    fn matches_hand_composed_matrix_product() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Identity).unwrap();
        let net = Mlp::init(spec, &mut rng(3));
        let p = net.params();
        let x = [0.3, -1.2];
        let (w1, b1) = (&p[0..6], &p[6..9]);
        let (w2, b2) = (&p[9..12], p[12]);
        let mut h = [0.0; 3];
        for o in 0..3 {
            h[o] = (w1[o * 2] * x[0] + w1[o * 2 + 1] * x[1] + b1[o]).max(0.0);
        }
        let y = w2[0] * h[0] + w2[1] * h[1] + w2[2] * h[2] + b2;
        assert!((net.forward(&x).unwrap()[0] - y).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let spec = MlpSpec::with_hidden(3, &[4], 2, Activation::Tanh).unwrap();
        let net = Mlp::init(spec, &mut rng(1));
        let (gp, gx) = net.grad(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(gp.iter().chain(&gx).all(|&g| g == 0.0));
    }

    #[test]
    fn linear_neuron_weight_gradient_is_input() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Identity).unwrap();
        let net = Mlp::new(spec, vec![2.5, 0.0]).unwrap();
        let (gp, gx) = net.grad(&[1.7], &[1.0]).unwrap();
        assert_eq!(gp, vec![1.7, 1.0]);
        assert_eq!(gx, vec![2.5]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = MlpSpec::new(vec![2, 1], Activation::Identity).unwrap();
        let net = Mlp::zeros(spec);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(MlpSpec::new(vec![3], Activation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Identity).is_err());
    }

    #[test]
    fn sgd_step_matches_definition() {
        let mut p = vec![1.0];
        Optimizer::sgd().step(&mut p, &[2.0], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for mut opt in [Optimizer::sgd(), Optimizer::adam(3)] {
            let mut p = vec![0.5, -1.0, 2.0];
            for _ in 0..5 {
                opt.step(&mut p, &[0.0; 3], 0.1).unwrap();
            }
            assert_eq!(p, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 => update = lr / (1 + 1e-8)
        let lr = 0.01;
        let mut p = vec![0.0; 4];
        Optimizer::adam(4).step(&mut p, &[1.0; 4], lr).unwrap();
        let expected = lr / (1.0 + 1e-8);
        for v in p {
            assert!((v + expected).abs() < 1e-12);
            assert!((v.abs() - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = vec![1.0, 1.0];
        let err = Optimizer::adam(2).step(&mut p, &[f64::NAN, 0.0], 0.1);
        assert!(matches!(err, Err(Error::NonFiniteGradient)));
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn seeded_init_is_bitwise_reproducible() {
        let spec = MlpSpec::with_hidden(4, &[8, 8], 2, Activation::Identity).unwrap();
        let a = Mlp::init(spec.clone(), &mut rng(9));
        let b = Mlp::init(spec, &mut rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec::with_hidden(3, &[5], 2, Activation::Tanh).unwrap();
        let net = Mlp::init(spec, &mut rng(4));
        let stem = dir.path().join("net");
        net.save(&stem).unwrap();
        let bytes = fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), 8 + 8 * net.params().len());
        assert_eq!(
            u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize,
            net.params().len()
        );
        assert_eq!(Mlp::load(&stem).unwrap(), net);
    }
}
