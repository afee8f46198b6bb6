//! Soft actor-critic with a tanh-squashed Gaussian policy, twin critics and a
//! fixed entropy temperature.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, Mlp, MlpSpec, Optimizer, Tape};
use crate::dynamics::TransitionSample;
use crate::env::Policy;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Added inside `log(1 - a^2 + TANH_EPS)` to keep the squashing correction finite.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Rewards are multiplied by this before entering the Bellman target.
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            reward_scale: 1e-3,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map `(obs - shift) / scale` applied before every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                expected: shift.len(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("normalizer needs finite shifts and positive scales".into()));
        }
        Ok(Self { shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// `log N(u; mean, exp(log_std)^2)`, summed over dimensions.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, ls), x)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Log-density of `a = tanh(u)`, `u ~ N(mean, std^2)`, evaluated at `a` in `(-1, 1)^d`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let u: Vec<f64> = action.iter().map(|a| a.atanh()).collect();
    gaussian_log_prob(mean, log_std, &u) - tanh_correction(action)
}

fn tanh_correction(action: &[f64]) -> f64 {
    action.iter().map(|a| (1.0 - a * a + TANH_EPS).ln()).sum()
}

/// A state-action value with its gradient in the action.
pub trait Critic {
    /// `Q(x, a)` and `dQ/da`, where `x` is the normalized observation.
    fn value_and_grad(&self, x: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `min(Q1, Q2)`; the gradient is that of the smaller network.
struct TwinCritic<'a> {
    q1: &'a Mlp,
    q2: &'a Mlp,
}

impl Critic for TwinCritic<'_> {
    fn value_and_grad(&self, x: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let input = concat(x, action);
        let v1 = self.q1.forward(&input)?[0];
        let v2 = self.q2.forward(&input)?[0];
        let net = if v1 <= v2 { self.q1 } else { self.q2 };
        let (_, gx) = net.grad(&input, &[1.0])?;
        Ok((v1.min(v2), gx[x.len()..].to_vec()))
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// Losses and entropy estimate of one update round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    /// `-mean(log pi)` over the batch.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentMeta {
    obs_dim: usize,
    act_dim: usize,
    config: SacConfig,
    normalizer: ObsNormalizer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacAgent {
    obs_dim: usize,
    act_dim: usize,
    config: SacConfig,
    normalizer: ObsNormalizer,
    policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    policy_opt: Optimizer,
    q1_opt: Optimizer,
    q2_opt: Optimizer,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        config: SacConfig,
        normalizer: ObsNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::InvalidConfig("observation and action dimensions must be positive".into()));
        }
        if normalizer.dim() != obs_dim {
            return Err(Error::DimensionMismatch {
                expected: obs_dim,
                got: normalizer.dim(),
            });
        }
        let policy = Mlp::init(
            MlpSpec::with_hidden(obs_dim, &config.hidden, 2 * act_dim, Activation::Identity)?,
            rng,
        );
        let q_spec = MlpSpec::with_hidden(obs_dim + act_dim, &config.hidden, 1, Activation::Identity)?;
        let q1 = Mlp::init(q_spec.clone(), rng);
        let q2 = Mlp::init(q_spec, rng);
        Ok(Self {
            obs_dim,
            act_dim,
            policy_opt: Optimizer::adam(policy.params().len()),
            q1_opt: Optimizer::adam(q1.params().len()),
            q2_opt: Optimizer::adam(q2.params().len()),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            config,
            normalizer,
            policy,
            q1,
            q2,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        let config = SacConfig {
            alpha,
            ..self.config.clone()
        };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn normalizer(&self) -> &ObsNormalizer {
        &self.normalizer
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy
    }

    pub fn policy_net_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn q_nets(&self) -> [&Mlp; 2] {
        [&self.q1, &self.q2]
    }

    pub fn q_nets_mut(&mut self) -> [&mut Mlp; 2] {
        [&mut self.q1, &mut self.q2]
    }

    pub fn target_nets(&self) -> [&Mlp; 2] {
        [&self.q1_target, &self.q2_target]
    }

    /// Concatenated parameters of every network: policy, Q1, Q2, target Q1, target Q2.
    pub fn all_params(&self) -> Vec<f64> {
        [&self.policy, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .flat_map(|n| n.params().iter().copied())
            .collect()
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Mean and clamped log-std for a normalized observation.
    fn head(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.policy.forward(x)?;
        split_head(&out, self.act_dim)
    }

    /// Mean and clamped log-std of the pre-squash Gaussian at `obs`.
    pub fn policy_head(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_obs(obs)?;
        self.head(&self.normalizer.apply(obs))
    }

    /// Raw action in `[-1, 1]^d` and its log-density; deterministic mode
    /// returns `tanh(mean)` and no density.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        let (mean, log_std) = self.policy_head(obs)?;
        if deterministic {
            return Ok((mean.iter().map(|m| m.tanh()).collect(), None));
        }
        let (a, logp) = draw(&mean, &log_std, rng);
        Ok((a, Some(logp)))
    }

    /// Twin-critic regression onto `r + gamma * (min Q_target(s', a') - alpha * log pi(a'|s'))`.
    /// Returns the squared error averaged over the batch and both networks.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &[TransitionSample], lr: f64, rng: &mut R) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("critic batch"));
        }
        let n = batch.len() as f64;
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for x in batch {
            self.check_obs(&x.s)?;
            self.check_obs(&x.s_next)?;
            if x.a.len() != self.act_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.act_dim,
                    got: x.a.len(),
                });
            }
            let xn = self.normalizer.apply(&x.s_next);
            let (mean, log_std) = self.head(&xn)?;
            let (a_next, logp) = draw(&mean, &log_std, rng);
            let input_next = concat(&xn, &a_next);
            let qt = self.q1_target.forward(&input_next)?[0].min(self.q2_target.forward(&input_next)?[0]);
            let y = self.config.reward_scale * x.r + self.config.gamma * (qt - self.config.alpha * logp);
            inputs.push(concat(&self.normalizer.apply(&x.s), &x.a));
            targets.push(y);
        }

        let mut total = 0.0;
        for (net, opt) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)] {
            let mut grad = vec![0.0; net.params().len()];
            let mut tape = Tape::default();
            let mut loss = 0.0;
            for (input, y) in inputs.iter().zip(&targets) {
                net.forward_tape(input, &mut tape)?;
                let err = tape.output()[0] - y;
                loss += err * err / n;
                net.backward(&tape, &[2.0 * err / n], &mut grad)?;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss".into()));
            }
            opt.step(net.params_mut(), &grad, lr)?;
            total += 0.5 * loss;
        }
        Ok(total)
    }

    /// Critic regression set with the policy held at its mean action:
    /// inputs `[x, a]` and targets `r + gamma * min Q_target(s', tanh(mean(s')))`.
    pub fn critic_targets(&self, batch: &[TransitionSample]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for x in batch {
            self.check_obs(&x.s)?;
            self.check_obs(&x.s_next)?;
            let xn = self.normalizer.apply(&x.s_next);
            let (mean, _) = self.head(&xn)?;
            let a_next: Vec<f64> = mean.iter().map(|m| m.tanh()).collect();
            let input_next = concat(&xn, &a_next);
            let qt = self.q1_target.forward(&input_next)?[0].min(self.q2_target.forward(&input_next)?[0]);
            inputs.push(concat(&self.normalizer.apply(&x.s), &x.a));
            targets.push(self.config.reward_scale * x.r + self.config.gamma * qt);
        }
        Ok((inputs, targets))
    }

    /// Loss `mean(alpha * log pi(a~|s) - Q(s, a~))` with reparameterized `a~`,
    /// its entropy estimate and the policy-parameter gradient.
    pub fn policy_gradient<R: Rng + ?Sized>(
        &self,
        observations: &[&[f64]],
        critic: &dyn Critic,
        rng: &mut R,
    ) -> Result<(ActorStats, Vec<f64>)> {
        if observations.is_empty() {
            return Err(Error::Empty("actor batch"));
        }
        let d = self.act_dim;
        let alpha = self.config.alpha;
        let n = observations.len() as f64;
        let mut grad = vec![0.0; self.policy.params().len()];
        let mut tape = Tape::default();
        let mut up = vec![0.0; 2 * d];
        let mut loss = 0.0;
        let mut sum_logp = 0.0;
        for obs in observations {
            self.check_obs(obs)?;
            let x = self.normalizer.apply(obs);
            self.policy.forward_tape(&x, &mut tape)?;
            let out = tape.output();
            let (mean, log_std) = split_head(out, d)?;
            let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut a = Vec::with_capacity(d);
            let mut logp = 0.0;
            for j in 0..d {
                let u = mean[j] + log_std[j].exp() * eps[j];
                let aj = u.tanh();
                logp += -0.5 * eps[j] * eps[j] - log_std[j] - 0.5 * (2.0 * PI).ln() - (1.0 - aj * aj + TANH_EPS).ln();
                a.push(aj);
            }
            let (q, dq) = critic.value_and_grad(&x, &a)?;
            loss += (alpha * logp - q) / n;
            sum_logp += logp;
            for j in 0..d {
                let one_m = 1.0 - a[j] * a[j];
                let dl_du = alpha * 2.0 * a[j] * one_m / (one_m + TANH_EPS) - dq[j] * one_m;
                up[j] = dl_du / n;
                let raw = out[d + j];
                up[d + j] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    (dl_du * log_std[j].exp() * eps[j] - alpha) / n
                } else {
                    0.0
                };
            }
            self.policy.backward(&tape, &up, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        Ok((
            ActorStats {
                loss,
                entropy: -sum_logp / n,
            },
            grad,
        ))
    }

    /// Policy step against an arbitrary critic.
    pub fn actor_update_with<R: Rng + ?Sized>(
        &mut self,
        observations: &[&[f64]],
        critic: &dyn Critic,
        lr: f64,
        rng: &mut R,
    ) -> Result<ActorStats> {
        let (stats, grad) = self.policy_gradient(observations, critic, rng)?;
        self.policy_opt.step(self.policy.params_mut(), &grad, lr)?;
        Ok(stats)
    }

    /// Policy step against the agent's own twin critics.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &[TransitionSample], lr: f64, rng: &mut R) -> Result<ActorStats> {
        let observations: Vec<&[f64]> = batch.iter().map(|x| x.s.as_slice()).collect();
        let critic = TwinCritic {
            q1: &self.q1,
            q2: &self.q2,
        };
        let (stats, grad) = self.policy_gradient(&observations, &critic, rng)?;
        self.policy_opt.step(self.policy.params_mut(), &grad, lr)?;
        Ok(stats)
    }

    pub fn soft_target_update(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {tau}")));
        }
        soft_update(self.q1_target.params_mut(), self.q1.params(), tau);
        soft_update(self.q2_target.params_mut(), self.q2.params(), tau);
        Ok(())
    }

    /// Critic step, actor step and target smoothing on one batch, at the configured rates.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[TransitionSample], rng: &mut R) -> Result<UpdateStats> {
        let critic_loss = self.critic_update(batch, self.config.critic_lr, rng)?;
        let actor = self.actor_update(batch, self.config.actor_lr, rng)?;
        self.soft_target_update(self.config.tau)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: actor.loss,
            entropy: actor.entropy,
        })
    }

    /// Writes every network plus `agent.json` into `dir`. Optimizer moments are not kept.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, net) in self.named_nets() {
            net.save(&dir.join(name))?;
        }
        let meta = AgentMeta {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
        };
        fs::write(dir.join("agent.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("agent.json");
        if !meta_path.exists() {
            return Err(Error::MissingFile(meta_path));
        }
        let meta: AgentMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        let load = |name: &str| Mlp::load(&dir.join(name));
        let policy = load("policy")?;
        let q1 = load("q1")?;
        let q2 = load("q2")?;
        let agent = Self {
            obs_dim: meta.obs_dim,
            act_dim: meta.act_dim,
            config: meta.config,
            normalizer: meta.normalizer,
            policy_opt: Optimizer::adam(policy.params().len()),
            q1_opt: Optimizer::adam(q1.params().len()),
            q2_opt: Optimizer::adam(q2.params().len()),
            q1_target: load("q1_target")?,
            q2_target: load("q2_target")?,
            policy,
            q1,
            q2,
        };
        if agent.policy.spec().input_dim() != agent.obs_dim || agent.policy.spec().output_dim() != 2 * agent.act_dim {
            return Err(Error::Parse(format!("policy network shape does not match {}", meta_path.display())));
        }
        Ok(agent)
    }

    fn named_nets(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("policy", &self.policy),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ]
    }
}

fn split_head(out: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy output".into()));
    }
    let mean = out[..d].to_vec();
    let log_std = out[d..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    Ok((mean, log_std))
}

/// Reparameterized draw `a = tanh(mean + std * eps)` with its log-density.
fn draw<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let mut a = Vec::with_capacity(mean.len());
    let mut logp = 0.0;
    for (m, ls) in mean.iter().zip(log_std) {
        let eps: f64 = rng.sample(StandardNormal);
        let aj = (m + ls.exp() * eps).tanh();
        logp += -0.5 * eps * eps - ls - 0.5 * (2.0 * PI).ln() - (1.0 - aj * aj + TANH_EPS).ln();
        a.push(aj);
    }
    (a, logp)
}

impl Policy for SacAgent {
    fn act(&self, obs: &[f64], rng: &mut dyn RngCore, deterministic: bool) -> Vec<f64> {
        self.sample_action(obs, rng, deterministic)
            .map(|(a, _)| a)
            .unwrap_or_else(|_| vec![0.0; self.act_dim])
    }
}
