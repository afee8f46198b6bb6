//! Transition models for synthetic rollouts.
//!
//! Both models predict the next day's price change `dP`; the rest of the next
//! state (cash, holdings, reward) follows deterministically from the trading
//! rules once `P' = max(P + dP, PRICE_FLOOR)` is known. [`NfDynamics`] samples
//! `dP` from a normalizing flow fitted to the unconditional joint density of
//! daily price differences. [`GaussianEnsemble`] is the MBPO-style baseline:
//! bootstrapped networks predicting a diagonal Gaussian over the next `dP`
//! from the previous one.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, Mlp, MlpSpec, Optimizer, Tape};
use crate::env::{action_scale, step, EnvConfig, EnvState, Market, Policy};
use crate::error::{Error, Result};
use crate::flow::{column_stats, FitOptions, FlowConfig, FlowModel};
use crate::market::{indicator_rows, N_INDICATORS};

/// Predicted prices never fall below this.
pub const PRICE_FLOOR: f64 = 0.01;

/// Rows of price history kept for recomputing indicators on predicted days.
pub const HISTORY_WINDOW: usize = 120;

const LOGVAR_MIN: f64 = -10.0;
const LOGVAR_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Real,
    Model,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Real => "real",
            SampleKind::Model => "model",
        }
    }
}

/// One `(s, a, s', r)` transition. `a` is the raw policy action in `[-1, 1]^d`;
/// `t` is the market day of `s` (model samples keep counting past it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
    pub kind: SampleKind,
    pub t: usize,
}

impl TransitionSample {
    /// Price block of `s` and `s'` for `d` stocks.
    pub fn prices(&self, d: usize) -> (&[f64], &[f64]) {
        (&self.s[1..1 + d], &self.s_next[1..1 + d])
    }
}

/// High/low/close rows (`[day][ticker]`) ending at the state's day.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceWindow {
    high: VecDeque<Vec<f64>>,
    low: VecDeque<Vec<f64>>,
    close: VecDeque<Vec<f64>>,
    capacity: usize,
}

impl PriceWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            high: VecDeque::new(),
            low: VecDeque::new(),
            close: VecDeque::new(),
            capacity: capacity.max(2),
        }
    }

    /// Days `t + 1 - capacity ..= t` of the market (fewer near the start).
    pub fn from_market(market: &Market, t: usize, capacity: usize) -> Self {
        let mut w = Self::new(capacity);
        let start = (t + 1).saturating_sub(w.capacity);
        for day in start..=t {
            let p = &market.prices;
            w.push(
                p.high.iter().map(|s| s[day]).collect(),
                p.low.iter().map(|s| s[day]).collect(),
                p.close_row(day),
            );
        }
        w
    }

    pub fn push(&mut self, high: Vec<f64>, low: Vec<f64>, close: Vec<f64>) {
        if self.close.len() == self.capacity {
            self.high.pop_front();
            self.low.pop_front();
            self.close.pop_front();
        }
        self.high.push_back(high);
        self.low.push_back(low);
        self.close.push_back(close);
    }

    /// Appends a predicted day with high = low = close.
    pub fn push_close(&mut self, close: &[f64]) {
        self.push(close.to_vec(), close.to_vec(), close.to_vec());
    }

    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    pub fn last_close(&self) -> Option<&[f64]> {
        self.close.back().map(Vec::as_slice)
    }

    pub fn last_delta(&self) -> Option<Vec<f64>> {
        let n = self.close.len();
        (n >= 2).then(|| self.close[n - 1].iter().zip(&self.close[n - 2]).map(|(a, b)| a - b).collect())
    }

    /// Indicator block of the newest day, ticker-major.
    pub fn latest_indicators(&self) -> Vec<f64> {
        let d = self.close.back().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(N_INDICATORS * d);
        for k in 0..d {
            let h: Vec<f64> = self.high.iter().map(|r| r[k]).collect();
            let l: Vec<f64> = self.low.iter().map(|r| r[k]).collect();
            let c: Vec<f64> = self.close.iter().map(|r| r[k]).collect();
            out.extend(indicator_rows(&h, &l, &c).last().unwrap());
        }
        out
    }
}

/// `rows[i + 1] - rows[i]` for consecutive price rows.
pub fn first_differences(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

/// `P(s') - P(s)` for every transition.
pub fn transition_deltas(samples: &[TransitionSample], d: usize) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|x| {
            let (p, p_next) = x.prices(d);
            p_next.iter().zip(p).map(|(b, a)| b - a).collect()
        })
        .collect()
}

/// Applies a price change to `state` and executes `raw_action` under the
/// trading rules. The window is extended with the predicted day.
pub fn apply_delta(
    state: &EnvState,
    raw_action: &[f64],
    delta: &[f64],
    window: &mut PriceWindow,
    env: &EnvConfig,
) -> TransitionSample {
    let next_prices: Vec<f64> = state
        .prices
        .iter()
        .zip(delta)
        .map(|(p, dp)| {
            let v = p + dp;
            if v.is_finite() {
                v.max(PRICE_FLOOR)
            } else {
                *p
            }
        })
        .collect();
    window.push_close(&next_prices);
    let indicators = if env.use_indicators {
        window.latest_indicators()
    } else {
        Vec::new()
    };
    let action = action_scale(raw_action, env.h_max);
    let res = step(state, &action, &next_prices, &indicators, env.cost_percentage);
    TransitionSample {
        s: state.observation(env.use_indicators),
        a: raw_action.to_vec(),
        s_next: res.next_state.observation(env.use_indicators),
        r: res.reward,
        done: false,
        kind: SampleKind::Model,
        t: state.t,
    }
}

/// Flow over daily price differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfDynamics {
    pub flow: FlowModel,
    /// Multiplies the base-normal draw; 0 always emits the flow's image of the origin.
    pub noise_scale: f64,
}

impl NfDynamics {
    pub fn new<R: Rng + ?Sized>(d: usize, config: FlowConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            flow: FlowModel::new(d, config, rng)?,
            noise_scale: 1.0,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.flow.dim()
    }

    /// `steps` maximum-likelihood updates on delta rows; returns the per-step log-likelihood.
    pub fn fit_deltas<R: Rng + ?Sized>(
        &mut self,
        deltas: &[Vec<f64>],
        steps: usize,
        opts: &FitOptions,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.flow.fit_steps(deltas, steps, opts, rng)
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.flow
            .sample_scaled(1, self.noise_scale, rng)
            .map(|mut v| v.pop().unwrap())
            .unwrap_or_else(|_| vec![0.0; self.n_stocks()])
    }

    pub fn predict<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        raw_action: &[f64],
        window: &mut PriceWindow,
        env: &EnvConfig,
        rng: &mut R,
    ) -> TransitionSample {
        let delta = self.sample_delta(rng);
        apply_delta(state, raw_action, &delta, window, env)
    }
}

/// Fits a fresh flow to the first differences of consecutive price rows.
pub fn nf_dyn_fit<R: Rng + ?Sized>(
    price_rows: &[Vec<f64>],
    config: FlowConfig,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<NfDynamics> {
    if price_rows.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: price_rows.len(),
        });
    }
    let d = price_rows[0].len();
    let deltas = first_differences(price_rows);
    let mut dyn_model = NfDynamics::new(d, config, rng)?;
    let opts = FitOptions {
        batch_size: opts.batch_size.clamp(1, deltas.len()),
        ..opts.clone()
    };
    dyn_model.flow.fit(&deltas, &opts, rng)?;
    Ok(dyn_model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            batch_size: 256,
            lr: 1e-3,
        }
    }
}

/// Bootstrapped ensemble of diagonal-Gaussian regressors `dP_{t-1} -> dP_t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianEnsemble {
    d: usize,
    config: EnsembleConfig,
    members: Vec<Mlp>,
    optimizers: Vec<Optimizer>,
    feat_mean: Vec<f64>,
    feat_scale: Vec<f64>,
    target_mean: Vec<f64>,
    target_scale: Vec<f64>,
    pub noise_scale: f64,
}

impl GaussianEnsemble {
    pub fn new<R: Rng + ?Sized>(d: usize, config: EnsembleConfig, rng: &mut R) -> Result<Self> {
        if config.members == 0 {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        let spec = MlpSpec::with_hidden(d, &config.hidden, 2 * d, Activation::Identity)?;
        let members: Vec<Mlp> = (0..config.members).map(|_| Mlp::init(spec.clone(), rng)).collect();
        let optimizers = members.iter().map(|m| Optimizer::adam(m.params().len())).collect();
        Ok(Self {
            d,
            config,
            members,
            optimizers,
            feat_mean: vec![0.0; d],
            feat_scale: vec![1.0; d],
            target_mean: vec![0.0; d],
            target_scale: vec![1.0; d],
            noise_scale: 1.0,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    fn set_stats(&mut self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        let feats: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
        let targets: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        (self.feat_mean, self.feat_scale) = column_stats(&feats, self.d)?;
        (self.target_mean, self.target_scale) = column_stats(&targets, self.d)?;
        Ok(())
    }

    fn standardize(v: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
        v.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// Standardized mean and clamped log-variance of one member.
    fn head(&self, member: usize, feat: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Self::standardize(feat, &self.feat_mean, &self.feat_scale);
        let out = self.members[member].forward(&x)?;
        let mean = out[..self.d].to_vec();
        let logvar = out[self.d..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        Ok((mean, logvar))
    }

    /// Predicted mean of `dP` in price units.
    pub fn predict_mean(&self, member: usize, feat: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.head(member, feat)?;
        Ok(mean
            .iter()
            .zip(&self.target_mean)
            .zip(&self.target_scale)
            .map(|((m, tm), ts)| tm + ts * m)
            .collect())
    }

    /// Gaussian NLL (nats, price units) of each pair under one member.
    pub fn mean_nll(&self, member: usize, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Empty("pairs"));
        }
        let log_scale: f64 = self.target_scale.iter().map(|s| s.ln()).sum();
        let mut total = 0.0;
        for (feat, target) in pairs {
            let (mean, logvar) = self.head(member, feat)?;
            let y = Self::standardize(target, &self.target_mean, &self.target_scale);
            for j in 0..self.d {
                total += 0.5 * ((2.0 * std::f64::consts::PI).ln() + logvar[j] + (y[j] - mean[j]).powi(2) * (-logvar[j]).exp());
            }
            total += log_scale;
        }
        Ok(total / pairs.len() as f64)
    }

    /// Trains each member on its own bootstrap resample for `steps` minibatch
    /// updates of the Gaussian NLL. Statistics are refreshed from `pairs`.
    pub fn fit<R: Rng + ?Sized>(&mut self, pairs: &[(Vec<f64>, Vec<f64>)], steps: usize, rng: &mut R) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(Error::Empty("ensemble training set"));
        }
        self.set_stats(pairs)?;
        let data: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|(f, t)| {
                (
                    Self::standardize(f, &self.feat_mean, &self.feat_scale),
                    Self::standardize(t, &self.target_mean, &self.target_scale),
                )
            })
            .collect();
        let batch = self.config.batch_size.clamp(1, data.len());
        let mut final_losses = Vec::with_capacity(self.members.len());
        for m in 0..self.members.len() {
            let mut member_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let boot: Vec<usize> = (0..data.len()).map(|_| member_rng.random_range(0..data.len())).collect();
            let mut last = f64::NAN;
            for _ in 0..steps {
                let idx: Vec<usize> = (0..batch).map(|_| boot[member_rng.random_range(0..boot.len())]).collect();
                let (loss, grad) = self.member_loss_grad(m, &data, &idx)?;
                let mut params = self.members[m].params().to_vec();
                self.optimizers[m].step(&mut params, &grad, self.config.lr)?;
                self.members[m].set_params(&params)?;
                last = loss;
            }
            final_losses.push(last);
        }
        Ok(final_losses)
    }

    fn member_loss_grad(&self, m: usize, data: &[(Vec<f64>, Vec<f64>)], idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        let net = &self.members[m];
        let mut grad = vec![0.0; net.params().len()];
        let mut tape = Tape::default();
        let mut up = vec![0.0; 2 * self.d];
        let mut loss = 0.0;
        let inv = 1.0 / idx.len() as f64;
        for &i in idx {
            let (x, y) = &data[i];
            net.forward_tape(x, &mut tape)?;
            let out = tape.output();
            for j in 0..self.d {
                let mu = out[j];
                let raw = out[self.d + j];
                let lv = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
                let inv_var = (-lv).exp();
                let err = y[j] - mu;
                loss += 0.5 * (lv + err * err * inv_var) * inv;
                up[j] = -err * inv_var * inv;
                up[self.d + j] = if raw > LOGVAR_MIN && raw < LOGVAR_MAX {
                    0.5 * (1.0 - err * err * inv_var) * inv
                } else {
                    0.0
                };
            }
            net.backward(&tape, &up, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("ensemble loss".into()));
        }
        Ok((loss, grad))
    }

    /// `dP` drawn from a uniformly chosen member given the previous `dP`.
    pub fn sample_delta<R: Rng + ?Sized>(&self, prev_delta: &[f64], rng: &mut R) -> Vec<f64> {
        let member = rng.random_range(0..self.members.len());
        let (mean, logvar) = match self.head(member, prev_delta) {
            Ok(h) => h,
            Err(_) => return vec![0.0; self.d],
        };
        (0..self.d)
            .map(|j| {
                let eps: f64 = rng.sample(StandardNormal);
                let z = mean[j] + self.noise_scale * (0.5 * logvar[j]).exp() * eps;
                self.target_mean[j] + self.target_scale[j] * z
            })
            .collect()
    }

    pub fn predict<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        raw_action: &[f64],
        window: &mut PriceWindow,
        env: &EnvConfig,
        rng: &mut R,
    ) -> TransitionSample {
        let prev = window.last_delta().unwrap_or_else(|| self.feat_mean.clone());
        let delta = self.sample_delta(&prev, rng);
        apply_delta(state, raw_action, &delta, window, env)
    }
}

/// `(dP_i, dP_{i+1})` pairs from a contiguous delta sequence.
pub fn delta_pairs(deltas: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    deltas.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

/// Builds an ensemble and fits it on `pairs`.
pub fn ens_fit<R: Rng + ?Sized>(
    d: usize,
    pairs: &[(Vec<f64>, Vec<f64>)],
    config: EnsembleConfig,
    steps: usize,
    rng: &mut R,
) -> Result<GaussianEnsemble> {
    if pairs.is_empty() {
        return Err(Error::Empty("ensemble training set"));
    }
    let mut ens = GaussianEnsemble::new(d, config, rng)?;
    ens.fit(pairs, steps, rng)?;
    Ok(ens)
}

/// Either dynamics model behind one prediction interface.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Flow(NfDynamics),
    Ensemble(GaussianEnsemble),
}

impl Dynamics {
    pub fn predict<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        raw_action: &[f64],
        window: &mut PriceWindow,
        env: &EnvConfig,
        rng: &mut R,
    ) -> TransitionSample {
        match self {
            Dynamics::Flow(m) => m.predict(state, raw_action, window, env, rng),
            Dynamics::Ensemble(m) => m.predict(state, raw_action, window, env, rng),
        }
    }
}

/// Rollout start: a state and the price history that ends at it.
#[derive(Debug, Clone)]
pub struct RolloutStart {
    pub state: EnvState,
    pub window: PriceWindow,
}

/// `horizon` chained model transitions from every start, chain after chain.
pub fn model_rollout<R: Rng>(
    dynamics: &Dynamics,
    policy: &dyn Policy,
    starts: &[RolloutStart],
    horizon: usize,
    env: &EnvConfig,
    rng: &mut R,
) -> Result<Vec<TransitionSample>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("rollout horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(starts.len() * horizon);
    for start in starts {
        let mut state = start.state.clone();
        let mut window = start.window.clone();
        let d = state.n_stocks();
        for _ in 0..horizon {
            let obs = state.observation(env.use_indicators);
            let raw = policy.act(&obs, rng as &mut dyn RngCore, false);
            let sample = dynamics.predict(&state, &raw, &mut window, env, rng);
            state = EnvState::from_observation(&sample.s_next, d, env.use_indicators, state.t + 1)?;
            if !env.use_indicators {
                state.indicators.clear();
            }
            out.push(sample);
        }
    }
    Ok(out)
}

/// Uniformly picks `n` rollout starts (with replacement) from real transitions.
pub fn sample_starts<R: Rng + ?Sized>(
    real: &[TransitionSample],
    market: &Market,
    n: usize,
    env: &EnvConfig,
    rng: &mut R,
) -> Result<Vec<RolloutStart>> {
    if real.is_empty() {
        return Err(Error::Empty("real transition buffer"));
    }
    let d = market.n_stocks();
    (0..n)
        .map(|_| {
            let x = real.choose(rng).unwrap();
            let state = EnvState::from_observation(&x.s, d, env.use_indicators, x.t)?;
            Ok(RolloutStart {
                state,
                window: PriceWindow::from_market(market, x.t, HISTORY_WINDOW),
            })
        })
        .collect()
}
