//! The model-based training loop: real environment steps feed a real-sample
//! buffer, a dynamics model is refitted on it every `M` steps and rolled out
//! from sampled real states into the agent buffer, and SAC updates draw from
//! the agent buffer after every real step.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    delta_pairs, model_rollout, sample_starts, transition_deltas, Dynamics, EnsembleConfig, GaussianEnsemble,
    NfDynamics, SampleKind, TransitionSample,
};
use crate::env::{action_scale, observation_dim, EnvConfig, Market, Policy, RandomPolicy};
use crate::error::{Error, Result};
use crate::flow::{FitOptions, FlowConfig};
use crate::market::N_INDICATORS;
use crate::sac::{ObsNormalizer, SacAgent, SacConfig, UpdateStats};

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<TransitionSample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, x: TransitionSample) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(x);
    }

    pub fn extend(&mut self, xs: impl IntoIterator<Item = TransitionSample>) {
        for x in xs {
            self.push(x);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&TransitionSample> {
        self.items.get(i)
    }

    pub fn to_vec(&self) -> Vec<TransitionSample> {
        self.items.iter().cloned().collect()
    }

    /// Up to `n` distinct samples chosen uniformly.
    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<TransitionSample> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSchedule {
    /// Total real environment steps `E`.
    pub env_steps: usize,
    /// Real steps between model refits `M`.
    pub refit_every: usize,
    /// Gradient steps per model refit `N`.
    pub model_steps: usize,
    /// SAC updates per real step `L`.
    pub updates_per_step: usize,
    /// Rollout horizon `k`.
    pub horizon: usize,
    pub rollout_batch: usize,
    /// Leading real steps that use uniform random actions.
    pub warmup: usize,
    pub env_capacity: usize,
    pub agent_capacity: usize,
}

impl Default for LoopSchedule {
    fn default() -> Self {
        Self {
            env_steps: 5000,
            refit_every: 250,
            model_steps: 200,
            updates_per_step: 4,
            horizon: 1,
            rollout_batch: 256,
            warmup: 500,
            env_capacity: 100_000,
            agent_capacity: 100_000,
        }
    }
}

impl LoopSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env_steps", self.env_steps),
            ("refit_every", self.refit_every),
            ("model_steps", self.model_steps),
            ("horizon", self.horizon),
            ("rollout_batch", self.rollout_batch),
            ("env_capacity", self.env_capacity),
            ("agent_capacity", self.agent_capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.refit_every > self.env_steps {
            return Err(Error::InvalidConfig(format!(
                "refit interval {} exceeds total env steps {}",
                self.refit_every, self.env_steps
            )));
        }
        Ok(())
    }

    pub fn n_refits(&self) -> usize {
        self.env_steps / self.refit_every
    }

    /// Buffer sizes at the end of a run: `(min(E, cap_env), min(floor(E/M) * batch * k, cap_agent))`.
    pub fn expected_sizes(&self) -> (usize, usize) {
        (
            self.env_steps.min(self.env_capacity),
            (self.n_refits() * self.rollout_batch * self.horizon).min(self.agent_capacity),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mbnf,
    Mbpo,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mbnf => "mbnf",
            ModelKind::Mbpo => "mbpo",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbnf" => Ok(ModelKind::Mbnf),
            "mbpo" => Ok(ModelKind::Mbpo),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub schedule: LoopSchedule,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub flow: FlowConfig,
    pub flow_fit: FitOptions,
    pub ensemble: EnsembleConfig,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sac.validate()?;
        if !(self.env.initial_balance > 0.0) || self.env.h_max <= 0 || !(self.env.cost_percentage >= 0.0) {
            return Err(Error::InvalidConfig(
                "initial balance and h_max must be positive, cost non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub episode: usize,
    pub t: usize,
    pub reward: f64,
    /// Reward accumulated since the start of the current episode.
    pub cumulative_reward: f64,
    /// Stats of the last SAC update at this step, if any ran.
    pub update: Option<UpdateStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitLog {
    pub refit: usize,
    pub step: usize,
    /// Mean negative log-likelihood on the last training batch.
    pub model_loss: f64,
    pub env_size: usize,
    pub agent_size: usize,
}

pub struct LoopOutput {
    pub agent: SacAgent,
    pub dynamics: Dynamics,
    pub env_buffer: ReplayBuffer,
    pub agent_buffer: ReplayBuffer,
    pub steps: Vec<StepLog>,
    pub refits: Vec<RefitLog>,
}

/// Called after each refit and its rollouts.
pub type RefitHook<'a> = dyn FnMut(&RefitLog, &SacAgent, &Dynamics, &ReplayBuffer) -> Result<()> + 'a;

const STREAM_AGENT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_MODEL: u64 = 2;
const STREAM_ROLLOUT: u64 = 3;
const STREAM_UPDATES: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Fixed observation scaling from the training range: balance over `B0`,
/// prices and indicators standardized per column, holdings over the share
/// count a full equal-weight allocation would buy.
pub fn observation_normalizer(market: &Market, range: Range<usize>, env: &EnvConfig) -> Result<ObsNormalizer> {
    if range.is_empty() || range.end > market.n_days() {
        return Err(Error::IndexOutOfRange {
            index: range.end,
            len: market.n_days(),
        });
    }
    let d = market.n_stocks();
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = var.sqrt();
        (mean, if scale > 1e-8 { scale } else { 1.0 })
    };
    let mut shift = vec![0.0];
    let mut scale = vec![env.initial_balance];
    let mut price_means = Vec::with_capacity(d);
    let mut price_scales = Vec::with_capacity(d);
    for k in 0..d {
        let (m, s) = stats(market.prices.close[k][range.clone()].to_vec());
        price_means.push(m);
        price_scales.push(s);
    }
    shift.extend(&price_means);
    scale.extend(&price_scales);
    shift.extend(std::iter::repeat_n(0.0, d));
    scale.extend(price_means.iter().map(|p| (env.initial_balance / (d as f64 * p.max(1e-8))).max(1.0)));
    if env.use_indicators {
        for k in 0..d {
            for j in 0..N_INDICATORS {
                let (m, s) = stats(range.clone().map(|t| market.indicators.values[k][t][j]).collect());
                shift.push(m);
                scale.push(s);
            }
        }
    }
    ObsNormalizer::new(shift, scale)
}

/// The agent a run with this seed starts from.
pub fn init_agent(market: &Market, train: Range<usize>, config: &LoopConfig, seed: u64) -> Result<SacAgent> {
    let d = market.n_stocks();
    let normalizer = observation_normalizer(market, train, &config.env)?;
    SacAgent::new(
        observation_dim(d, config.env.use_indicators),
        d,
        config.sac.clone(),
        normalizer,
        &mut stream(seed, STREAM_AGENT),
    )
}

/// MBNF: the loop with a normalizing-flow dynamics model.
pub fn run_mbnf(market: &Market, train: Range<usize>, config: &LoopConfig, seed: u64) -> Result<LoopOutput> {
    run_loop(market, train, config, ModelKind::Mbnf, seed, None)
}

/// MBPO baseline: the same loop with a Gaussian ensemble.
pub fn run_mbpo(market: &Market, train: Range<usize>, config: &LoopConfig, seed: u64) -> Result<LoopOutput> {
    run_loop(market, train, config, ModelKind::Mbpo, seed, None)
}

pub fn run_loop(
    market: &Market,
    train: Range<usize>,
    config: &LoopConfig,
    kind: ModelKind,
    seed: u64,
    mut on_refit: Option<&mut RefitHook<'_>>,
) -> Result<LoopOutput> {
    config.validate()?;
    if train.len() < 2 || train.end > market.n_days() {
        return Err(Error::InvalidConfig(format!(
            "training range {}..{} cannot hold one episode of a {}-day market",
            train.start,
            train.end,
            market.n_days()
        )));
    }
    let sched = &config.schedule;
    let env = &config.env;
    let d = market.n_stocks();

    let mut agent = init_agent(market, train.clone(), config, seed)?;
    let mut act_rng = stream(seed, STREAM_ACTIONS);
    let mut model_rng = stream(seed, STREAM_MODEL);
    let mut rollout_rng = stream(seed, STREAM_ROLLOUT);
    let mut update_rng = stream(seed, STREAM_UPDATES);

    let mut dynamics = match kind {
        ModelKind::Mbnf => Dynamics::Flow(NfDynamics::new(d, config.flow.clone(), &mut model_rng)?),
        ModelKind::Mbpo => Dynamics::Ensemble(GaussianEnsemble::new(d, config.ensemble.clone(), &mut model_rng)?),
    };
    let mut env_buffer = ReplayBuffer::new(sched.env_capacity);
    let mut agent_buffer = ReplayBuffer::new(sched.agent_capacity);
    let mut steps = Vec::with_capacity(sched.env_steps);
    let mut refits = Vec::with_capacity(sched.n_refits());
    let random = RandomPolicy { n_stocks: d };

    let mut state = market.reset(train.start, env.initial_balance)?;
    let mut episode = 0;
    let mut episode_return = 0.0;
    for i in 1..=sched.env_steps {
        let obs = state.observation(env.use_indicators);
        let raw = if i <= sched.warmup {
            random.act(&obs, &mut act_rng, false)
        } else {
            agent.sample_action(&obs, &mut act_rng, false)?.0
        };
        let res = market.step(&state, &action_scale(&raw, env.h_max), env.cost_percentage)?;
        let done = res.next_state.t + 1 >= train.end;
        episode_return += res.reward;
        env_buffer.push(TransitionSample {
            s: obs,
            a: raw,
            s_next: res.next_state.observation(env.use_indicators),
            r: res.reward,
            done,
            kind: SampleKind::Real,
            t: state.t,
        });

        if i % sched.refit_every == 0 {
            let model_loss = refit(&mut dynamics, &env_buffer, d, config, &mut model_rng)?;
            let starts = sample_starts(&env_buffer.to_vec(), market, sched.rollout_batch, env, &mut rollout_rng)?;
            let synthetic = model_rollout(&dynamics, &agent, &starts, sched.horizon, env, &mut rollout_rng)?;
            agent_buffer.extend(synthetic);
            let log = RefitLog {
                refit: refits.len() + 1,
                step: i,
                model_loss,
                env_size: env_buffer.len(),
                agent_size: agent_buffer.len(),
            };
            if let Some(hook) = on_refit.as_mut() {
                hook(&log, &agent, &dynamics, &agent_buffer)?;
            }
            refits.push(log);
        }

        let mut update = None;
        if !agent_buffer.is_empty() {
            for _ in 0..sched.updates_per_step {
                let batch = agent_buffer.sample(config.sac.batch_size, &mut update_rng);
                update = Some(agent.update(&batch, &mut update_rng)?);
            }
        }
        steps.push(StepLog {
            step: i,
            episode,
            t: state.t,
            reward: res.reward,
            cumulative_reward: episode_return,
            update,
        });

        if done {
            episode += 1;
            episode_return = 0.0;
            state = market.reset(train.start, env.initial_balance)?;
        } else {
            state = res.next_state;
        }
    }

    Ok(LoopOutput {
        agent,
        dynamics,
        env_buffer,
        agent_buffer,
        steps,
        refits,
    })
}

/// Continues training the dynamics model on the real buffer; returns the final batch NLL.
fn refit(dynamics: &mut Dynamics, env_buffer: &ReplayBuffer, d: usize, config: &LoopConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let real = env_buffer.to_vec();
    let deltas = transition_deltas(&real, d);
    let steps = config.schedule.model_steps;
    match dynamics {
        Dynamics::Flow(m) => {
            let curve = m.fit_deltas(&deltas, steps, &config.flow_fit, rng)?;
            Ok(-curve.last().copied().unwrap_or(f64::NAN))
        }
        Dynamics::Ensemble(m) => {
            let mut pairs = Vec::new();
            for (w, dw) in real.windows(2).zip(deltas.windows(2)) {
                if w[1].t == w[0].t + 1 {
                    pairs.extend(delta_pairs(dw));
                }
            }
            if pairs.is_empty() {
                pairs = deltas.iter().map(|x| (vec![0.0; d], x.clone())).collect();
            }
            m.fit(&pairs, steps, rng)?;
            let nll: f64 = (0..m.n_members()).map(|k| m.mean_nll(k, &pairs)).sum::<Result<f64>>()?;
            Ok(nll / m.n_members() as f64)
        }
    }
}

/// Deterministic-mode equity curves `Asset_t` over `range`, one per episode.
/// The portfolio starts all cash at `range.start`.
pub fn evaluate(
    policy: &dyn Policy,
    market: &Market,
    range: Range<usize>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if range.len() < 2 || range.end > market.n_days() {
        return Err(Error::InvalidConfig(format!(
            "evaluation range {}..{} is not inside a {}-day market",
            range.start,
            range.end,
            market.n_days()
        )));
    }
    (0..episodes.max(1))
        .map(|e| {
            let mut rng = stream(seed, 100 + e as u64);
            let mut state = market.reset(range.start, env.initial_balance)?;
            let mut curve = Vec::with_capacity(range.len());
            curve.push(state.asset());
            while state.t + 1 < range.end {
                let raw = policy.act(&state.observation(env.use_indicators), &mut rng, true);
                state = market.step(&state, &action_scale(&raw, env.h_max), env.cost_percentage)?.next_state;
                curve.push(state.asset());
            }
            Ok(curve)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `step,episode,t,reward,R_t,critic_loss,actor_loss,entropy_estimate`.
pub fn write_train_log(path: &Path, rows: &[StepLog]) -> Result<()> {
    let mut out = String::from("step,episode,t,reward,R_t,critic_loss,actor_loss,entropy_estimate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.episode,
            r.t,
            r.reward,
            r.cumulative_reward,
            fmt_opt(r.update.map(|u| u.critic_loss)),
            fmt_opt(r.update.map(|u| u.actor_loss)),
            fmt_opt(r.update.map(|u| u.entropy)),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// `refit,step,model_loss,env_size,agent_size`.
pub fn write_refit_log(path: &Path, rows: &[RefitLog]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "refit,step,model_loss,env_size,agent_size")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.refit, r.step, r.model_loss, r.env_size, r.agent_size)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ConstantPolicy;
    use crate::market::PriceTable;
    use chrono::NaiveDate;

    fn market(days: usize, d: usize) -> Market {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        let dates = (0..days).map(|i| start + chrono::Days::new(i as u64)).collect();
        let close = (0..d)
            .map(|k| {
                (0..days)
                    .map(|t| 50.0 + 10.0 * k as f64 + 0.05 * t as f64 + 2.0 * ((t * (k + 2)) as f64 * 0.3).sin())
                    .collect()
            })
            .collect();
        Market::new(PriceTable::from_closes((0..d).map(|k| format!("S{k}")).collect(), dates, close).unwrap())
    }

    fn tiny(env_steps: usize, refit_every: usize, rollout_batch: usize, horizon: usize, updates: usize) -> LoopConfig {
        LoopConfig {
            schedule: LoopSchedule {
                env_steps,
                refit_every,
                model_steps: 3,
                updates_per_step: updates,
                horizon,
                rollout_batch,
                warmup: 3,
                ..LoopSchedule::default()
            },
            sac: SacConfig {
                hidden: vec![8],
                batch_size: 8,
                ..SacConfig::default()
            },
            flow: FlowConfig {
                n_layers: 2,
                hidden: vec![8],
            },
            flow_fit: FitOptions {
                batch_size: 16,
                ..FitOptions::default()
            },
            ensemble: EnsembleConfig {
                members: 2,
                hidden: vec![8],
                batch_size: 16,
                ..EnsembleConfig::default()
            },
            ..LoopConfig::default()
        }
    }

    fn sample(t: usize) -> TransitionSample {
        TransitionSample {
            s: vec![t as f64],
            a: vec![0.0],
            s_next: vec![t as f64 + 1.0],
            r: 0.0,
            done: false,
            kind: SampleKind::Real,
            t,
        }
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        b.extend((0..5).map(sample));
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().t, 2);
        assert_eq!(b.get(2).unwrap().t, 4);
    }

    #[test]
    fn buffer_sample_has_no_repeats() {
        let mut b = ReplayBuffer::new(100);
        b.extend((0..50).map(sample));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut ts: Vec<usize> = b.sample(50, &mut r).iter().map(|x| x.t).collect();
        ts.sort();
        assert_eq!(ts, (0..50).collect::<Vec<_>>());
        assert_eq!(b.sample(80, &mut r).len(), 50);
    }

    #[test]
    fn schedule_counting_example() {
        let m = market(40, 2);
        let cfg = tiny(10, 5, 8, 1, 1);
        let out = run_mbnf(&m, 0..30, &cfg, 1).unwrap();
        assert_eq!(out.env_buffer.len(), 10);
        assert_eq!(out.agent_buffer.len(), 16);
        assert_eq!(out.refits.len(), 2);
        assert_eq!(cfg.schedule.expected_sizes(), (10, 16));
    }

    #[test]
    fn mbpo_logs_two_refits() {
        let m = market(40, 2);
        let out = run_mbpo(&m, 0..30, &tiny(10, 5, 8, 1, 1), 1).unwrap();
        assert_eq!(out.refits.len(), 2);
        assert_eq!(out.agent_buffer.len(), 16);
        assert!(out.refits.iter().all(|r| r.model_loss.is_finite()));
    }

    #[test]
    fn no_updates_keep_initial_policy() {
        let m = market(40, 2);
        let cfg = tiny(12, 4, 8, 2, 0);
        let out = run_mbnf(&m, 0..30, &cfg, 3).unwrap();
        let init = init_agent(&m, 0..30, &cfg, 3).unwrap();
        assert_eq!(out.agent.all_params(), init.all_params());
    }

    #[test]
    fn refit_interval_longer_than_run_is_rejected() {
        let m = market(40, 2);
        assert!(matches!(run_mbnf(&m, 0..30, &tiny(4, 5, 8, 1, 1), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn episodes_wrap_at_split_end() {
        let m = market(40, 1);
        let out = run_mbnf(&m, 5..10, &tiny(10, 10, 4, 1, 0), 0).unwrap();
        let ts: Vec<usize> = out.env_buffer.iter().map(|x| x.t).collect();
        assert_eq!(ts, vec![5, 6, 7, 8, 5, 6, 7, 8, 5, 6]);
        let done: Vec<bool> = out.env_buffer.iter().map(|x| x.done).collect();
        assert_eq!(done.iter().filter(|&&x| x).count(), 2);
        assert!(done[3] && done[7]);
        assert_eq!(out.steps[4].episode, 1);
        assert_eq!(out.steps[4].cumulative_reward, out.steps[4].reward);
    }

    #[test]
    fn shared_prefix_between_model_kinds() {
        let m = market(60, 2);
        let cfg = tiny(20, 10, 8, 1, 2);
        let a = run_mbnf(&m, 0..50, &cfg, 9).unwrap();
        let b = run_mbpo(&m, 0..50, &cfg, 9).unwrap();
        let first: Vec<_> = a.env_buffer.iter().take(10).cloned().collect();
        let second: Vec<_> = b.env_buffer.iter().take(10).cloned().collect();
        assert_eq!(first, second);
    }

    #[test]
    fn same_seed_same_logs() {
        let m = market(60, 2);
        let cfg = tiny(20, 5, 8, 2, 2);
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.csv", "b.csv"] {
            let out = run_mbnf(&m, 0..50, &cfg, 11).unwrap();
            write_train_log(&dir.path().join(name), &out.steps).unwrap();
        }
        let a = fs::read(dir.path().join("a.csv")).unwrap();
        let b = fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hold_policy_keeps_cash() {
        let m = market(30, 2);
        let env = EnvConfig::default();
        let curves = evaluate(&ConstantPolicy(vec![0.0, 0.0]), &m, 5..25, &env, 2, 0).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].len(), 20);
        assert!(curves[0].iter().all(|&a| a == env.initial_balance));
    }

    #[test]
    fn buy_and_hold_ledger() {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        let dates = (0..4).map(|i| start + chrono::Days::new(i)).collect();
        let close = vec![vec![10.0, 11.0, 12.0, 13.0]];
        let m = Market::new(PriceTable::from_closes(vec!["A".into()], dates, close).unwrap());
        let env = EnvConfig {
            initial_balance: 1000.0,
            h_max: 10,
            cost_percentage: 0.0,
            use_indicators: false,
        };
        let curve = &evaluate(&ConstantPolicy(vec![1.0]), &m, 0..4, &env, 1, 0).unwrap()[0];
        // Day 0: buy 10 @ 10 -> cash 900; day 1: buy 10 @ 11 -> 790; day 2: buy 10 @ 12 -> 670.
        assert_eq!(curve, &vec![1000.0, 900.0 + 10.0 * 11.0, 790.0 + 20.0 * 12.0, 670.0 + 30.0 * 13.0]);
    }

    #[test]
    fn evaluation_leaves_agent_untouched() {
        let m = market(60, 2);
        let cfg = tiny(10, 5, 8, 1, 1);
        let agent = init_agent(&m, 0..40, &cfg, 0).unwrap();
        let before = agent.all_params();
        evaluate(&agent, &m, 40..60, &cfg.env, 3, 1).unwrap();
        assert_eq!(agent.all_params(), before);
    }
}
