//! Soft actor-critic with a tanh-squashed Gaussian actor, a single critic
//! with a Polyak target, and the state-specific critic regularizer.
//!
//! Losses follow the entropy-scaled form used throughout this crate:
//!
//! * critic: `½ (Q(s,a) − (r + γ(1−d)(Q̄(s',a') − α log π(a'|s'))))²`
//! * actor:  `log π(ã|s) − Q(s,ã)/α` with `ã` reparameterized
//! * regularizer: `λ(s,g) |Q(s,g,ã) − Q_old(s,g,ã)|`, λ = 1 on the
//!   k-fraction of batch elements with the smallest critic loss.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LespError, Result};
use crate::nn::{Activation, Adam, ForwardCache, Mlp, MlpGrads};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Entropy temperature α.
    pub temperature: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak coefficient for the target critic.
    pub tau_target: f64,
    /// Critic updates between refreshes of the frozen regularization snapshot.
    pub snapshot_interval: u64,
}

impl SacConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            hidden: vec![256, 256],
            gamma: 0.99,
            temperature: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            tau_target: 0.005,
            snapshot_interval: 500,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(LespError::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.temperature > 0.0) {
            return Err(LespError::Config("temperature must be positive".into()));
        }
        if self.snapshot_interval == 0 {
            return Err(LespError::Config("snapshot interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Off-policy batch. Rows of `obs`/`next_obs` are network inputs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self, cfg: &SacConfig) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(LespError::InvalidArgument("empty batch".into()));
        }
        if self.obs.dim() != (n, cfg.obs_dim)
            || self.next_obs.dim() != (n, cfg.obs_dim)
            || self.actions.dim() != (n, cfg.action_dim)
            || self.dones.len() != n
        {
            return Err(LespError::Shape("batch fields disagree with agent dimensions".into()));
        }
        Ok(())
    }
}

/// λ per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct RegMask {
    pub lambda: Vec<u8>,
    pub k_fraction: f64,
}

impl RegMask {
    pub fn active(&self) -> usize {
        self.lambda.iter().filter(|&&l| l == 1).count()
    }
}

/// λ = 1 for the `round(k·n)` smallest losses, ties broken by lower index.
pub fn reg_mask(per_element_losses: &[f64], k_fraction: f64) -> RegMask {
    let n = per_element_losses.len();
    let k = k_fraction.clamp(0.0, 1.0);
    let count = ((k * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| per_element_losses[a].total_cmp(&per_element_losses[b]).then(a.cmp(&b)));
    let mut lambda = vec![0u8; n];
    for &i in &order[..count] {
        lambda[i] = 1;
    }
    RegMask { lambda, k_fraction: k }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    None,
    StateSpecific { k_fraction: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CriticLoss {
    pub mean: f64,
    pub per_element: Vec<f64>,
    pub q: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub reg_loss: f64,
    pub reg_active: usize,
}

/// Squashed-Gaussian sample for one batch of actor outputs.
struct Squashed {
    actions: Array2<f64>,
    log_probs: Vec<f64>,
    std: Array2<f64>,
    /// 1 where the raw log-std was inside the clamp range.
    log_std_live: Array2<f64>,
}

/// `ln(1 − tanh²(u))`, stable for large |u|.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn squash(actor_out: ArrayView2<f64>, noise: ArrayView2<f64>, act_dim: usize) -> Squashed {
    let n = actor_out.nrows();
    let mut actions = Array2::zeros((n, act_dim));
    let mut std = Array2::zeros((n, act_dim));
    let mut live = Array2::zeros((n, act_dim));
    let mut log_probs = vec![0.0; n];
    for b in 0..n {
        let mut lp = 0.0;
        for i in 0..act_dim {
            let mean = actor_out[[b, i]];
            let raw = actor_out[[b, act_dim + i]];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sd = ls.exp();
            let eps = noise[[b, i]];
            let u = mean + sd * eps;
            actions[[b, i]] = u.tanh();
            std[[b, i]] = sd;
            live[[b, i]] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) { 1.0 } else { 0.0 };
            lp += -0.5 * eps * eps - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        }
        log_probs[b] = lp;
    }
    Squashed { actions, log_probs, std, log_std_live: live }
}

/// Log-density of a squashed action `a ∈ (−1, 1)^d` given pre-squash mean and log-std.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let u = a.atanh();
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_critic: Mlp,
    /// Frozen critic copy used by the regularizer.
    pub snapshot_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    cfg: SacConfig,
    critic_updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut actor_sizes = vec![cfg.obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(2 * cfg.action_dim);
        let mut critic_sizes = vec![cfg.obs_dim + cfg.action_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, rng)?;
        let critic = Mlp::new(&critic_sizes, Activation::Relu, rng)?;
        Self::from_nets(cfg, actor, critic)
    }

    pub fn from_nets(cfg: SacConfig, actor: Mlp, critic: Mlp) -> Result<Self> {
        cfg.validate()?;
        if actor.input_dim() != cfg.obs_dim || actor.output_dim() != 2 * cfg.action_dim {
            return Err(LespError::Shape("actor does not match agent dimensions".into()));
        }
        if critic.input_dim() != cfg.obs_dim + cfg.action_dim || critic.output_dim() != 1 {
            return Err(LespError::Shape("critic does not match agent dimensions".into()));
        }
        let actor_opt = Adam::new(&actor, cfg.actor_lr);
        let critic_opt = Adam::new(&critic, cfg.critic_lr);
        Ok(Self {
            target_critic: critic.clone(),
            snapshot_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            cfg,
            critic_updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_opt.step_count()
    }

    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], mode: ActMode, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (a, lp) = self.act_batch(x, mode, rng)?;
        Ok((a.row(0).to_vec(), lp[0]))
    }

    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<f64>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let out = self.actor.forward_batch(inputs)?;
        if !out.iter().all(|v| v.is_finite()) {
            return Err(LespError::NonFinite("actor output".into()));
        }
        let d = self.cfg.action_dim;
        let noise = match mode {
            ActMode::Stochastic => standard_normal(inputs.nrows(), d, rng),
            ActMode::Deterministic => Array2::zeros((inputs.nrows(), d)),
        };
        let sq = squash(out.view(), noise.view(), d);
        // keep actions strictly inside the open box
        let lim = 1.0 - 1e-12;
        let actions = sq.actions.mapv(|a| a.clamp(-lim, lim));
        Ok((actions, sq.log_probs))
    }

    pub fn q_values(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let x = hstack(obs, actions);
        Ok(self.critic.forward_batch(x.view())?.column(0).to_vec())
    }

    /// Bellman targets with `a' ~ π(·|s')` drawn from `next_noise`.
    pub fn critic_targets(&self, batch: &Batch, next_noise: ArrayView2<f64>) -> Result<Vec<f64>> {
        let d = self.cfg.action_dim;
        let out = self.actor.forward_batch(batch.next_obs.view())?;
        let sq = squash(out.view(), next_noise, d);
        let x = hstack(batch.next_obs.view(), sq.actions.view());
        let q_next = self.target_critic.forward_batch(x.view())?;
        let (g, alpha) = (self.cfg.gamma, self.cfg.temperature);
        Ok((0..batch.len())
            .map(|b| {
                let cont = if batch.dones[b] { 0.0 } else { 1.0 };
                batch.rewards[b] + g * cont * (q_next[[b, 0]] - alpha * sq.log_probs[b])
            })
            .collect())
    }

    pub fn critic_loss<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<CriticLoss> {
        batch.check(&self.cfg)?;
        let noise = standard_normal(batch.len(), self.cfg.action_dim, rng);
        self.critic_loss_with_noise(batch, noise.view())
    }

    pub fn critic_loss_with_noise(&self, batch: &Batch, next_noise: ArrayView2<f64>) -> Result<CriticLoss> {
        batch.check(&self.cfg)?;
        let targets = self.critic_targets(batch, next_noise)?;
        let q = self.q_values(batch.obs.view(), batch.actions.view())?;
        Ok(Self::assemble_critic_loss(q, targets))
    }

    fn assemble_critic_loss(q: Vec<f64>, targets: Vec<f64>) -> CriticLoss {
        let per_element: Vec<f64> = q.iter().zip(&targets).map(|(q, y)| 0.5 * (q - y) * (q - y)).collect();
        let mean = per_element.iter().sum::<f64>() / per_element.len() as f64;
        CriticLoss { mean, per_element, q, targets }
    }

    /// Critic-loss gradient for fixed targets.
    pub fn critic_loss_grad(&self, batch: &Batch, targets: &[f64]) -> Result<(CriticLoss, MlpGrads)> {
        batch.check(&self.cfg)?;
        let cache = self.critic.forward_cached(hstack(batch.obs.view(), batch.actions.view()))?;
        let q: Vec<f64> = cache.output().column(0).to_vec();
        let n = q.len() as f64;
        let og = Array2::from_shape_fn((q.len(), 1), |(b, _)| (q[b] - targets[b]) / n);
        let (grads, _) = self.critic.backward_batch(&cache, og.view(), false)?;
        Ok((Self::assemble_critic_loss(q, targets.to_vec()), grads))
    }

    /// `mean_b λ_b |Q(s_b, a_b) − Q_old(s_b, a_b)|` and its critic gradient.
    pub fn stability_penalty(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        mask: &RegMask,
    ) -> Result<(f64, MlpGrads)> {
        let n = obs.nrows();
        if mask.lambda.len() != n || actions.nrows() != n {
            return Err(LespError::Shape("mask length does not match batch".into()));
        }
        let rows: Vec<usize> = (0..n).filter(|&b| mask.lambda[b] == 1).collect();
        if rows.is_empty() {
            return Ok((0.0, MlpGrads::zeros_like(&self.critic)));
        }
        let obs_m = obs.select(Axis(0), &rows);
        let act_m = actions.select(Axis(0), &rows);
        let x = hstack(obs_m.view(), act_m.view());
        let old = self.snapshot_critic.forward_batch(x.view())?;
        let cache = self.critic.forward_cached(x)?;
        let q = cache.output();
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let og = Array2::from_shape_fn((rows.len(), 1), |(r, _)| {
            let diff = q[[r, 0]] - old[[r, 0]];
            diff.signum() * inv_n * if diff == 0.0 { 0.0 } else { 1.0 }
        });
        for r in 0..rows.len() {
            loss += (q[[r, 0]] - old[[r, 0]]).abs();
        }
        let (grads, _) = self.critic.backward_batch(&cache, og.view(), false)?;
        Ok((loss * inv_n, grads))
    }

    pub fn actor_loss<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, rng: &mut R) -> Result<f64> {
        let noise = standard_normal(obs.nrows(), self.cfg.action_dim, rng);
        Ok(self.actor_loss_and_grad(obs, noise.view())?.0)
    }

    /// `mean_b [log π(ã_b|s_b) − Q(s_b, ã_b)/α]` with `ã = tanh(μ + σ ε)`;
    /// gradient with respect to the actor only.
    pub fn actor_loss_and_grad(&self, obs: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<(f64, MlpGrads)> {
        let n = obs.nrows();
        if n == 0 {
            return Err(LespError::InvalidArgument("empty batch".into()));
        }
        if noise.dim() != (n, self.cfg.action_dim) {
            return Err(LespError::Shape("noise does not match batch".into()));
        }
        let actor_cache = self.actor.forward_cached(obs.to_owned())?;
        let sq = squash(actor_cache.output().view(), noise, self.cfg.action_dim);
        self.actor_loss_from(obs, noise, &actor_cache, &sq)
    }

    fn actor_loss_from(
        &self,
        obs: ArrayView2<f64>,
        noise: ArrayView2<f64>,
        actor_cache: &ForwardCache,
        sq: &Squashed,
    ) -> Result<(f64, MlpGrads)> {
        let n = obs.nrows();
        let d = self.cfg.action_dim;
        let critic_cache = self.critic.forward_cached(hstack(obs, sq.actions.view()))?;
        let q = critic_cache.output();
        let inv_alpha = 1.0 / self.cfg.temperature;
        let inv_n = 1.0 / n as f64;
        let loss = (0..n).map(|b| sq.log_probs[b] - inv_alpha * q[[b, 0]]).sum::<f64>() * inv_n;
        let ones = Array2::from_elem((n, 1), 1.0);
        let dq_dx = self.critic.input_grad(&critic_cache, ones.view())?;
        let dq_da = dq_dx.slice(s![.., self.cfg.obs_dim..]);
        let mut og = Array2::zeros((n, 2 * d));
        for b in 0..n {
            for i in 0..d {
                let a = sq.actions[[b, i]];
                let sd_eps = sq.std[[b, i]] * noise[[b, i]];
                let dl_du = 2.0 * a - inv_alpha * dq_da[[b, i]] * (1.0 - a * a);
                og[[b, i]] = dl_du * inv_n;
                og[[b, d + i]] = (-1.0 + dl_du * sd_eps) * sq.log_std_live[[b, i]] * inv_n;
            }
        }
        let (grads, _) = self.actor.backward_batch(actor_cache, og.view(), false)?;
        Ok((loss, grads))
    }

    /// One critic step (with the regularizer when requested), one actor step,
    /// then the target update and, on schedule, a snapshot refresh.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, reg: Regularization, rng: &mut R) -> Result<UpdateReport> {
        batch.check(&self.cfg)?;
        let n = batch.len();
        let d = self.cfg.action_dim;
        let next_noise = standard_normal(n, d, rng);
        let cur_noise = standard_normal(n, d, rng);

        let targets = self.critic_targets(batch, next_noise.view())?;
        // the actor is not touched until after the critic step, so one
        // forward pass serves both the penalty and the actor loss
        let actor_cache = self.actor.forward_cached(batch.obs.clone())?;
        let sq = squash(actor_cache.output().view(), cur_noise.view(), d);
        let (closs, mut cgrads) = self.critic_loss_grad(batch, &targets)?;
        if !closs.mean.is_finite() {
            return Err(LespError::NonFinite("critic loss".into()));
        }

        let mut reg_loss = 0.0;
        let mut reg_active = 0;
        if let Regularization::StateSpecific { k_fraction } = reg {
            let mask = reg_mask(&closs.per_element, k_fraction);
            reg_active = mask.active();
            if reg_active > 0 {
                let (l, g) = self.stability_penalty(batch.obs.view(), sq.actions.view(), &mask)?;
                reg_loss = l;
                cgrads.add_assign(&g);
            }
        }
        self.critic_opt.step(&mut self.critic, &cgrads)?;

        let (aloss, agrads) = self.actor_loss_from(batch.obs.view(), cur_noise.view(), &actor_cache, &sq)?;
        if !aloss.is_finite() {
            return Err(LespError::NonFinite("actor loss".into()));
        }
        self.actor_opt.step(&mut self.actor, &agrads)?;

        self.target_critic.soft_update_from(&self.critic, self.cfg.tau_target);
        self.critic_updates += 1;
        if self.critic_updates % self.cfg.snapshot_interval == 0 {
            self.snapshot_critic = self.critic.clone();
        }
        Ok(UpdateReport { critic_loss: closs.mean, actor_loss: aloss, reg_loss, reg_active })
    }
}
