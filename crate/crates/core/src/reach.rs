//! Random-walk pretraining data and the goal-conditioned reachability value
//! `V(s, g) ≈ −min(temporal distance, H_max)`.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use crate::envs::{MazeSpec, StateVec, STATE_DIM};
use crate::error::{LespError, Result};
use crate::nn::{Activation, Adam, Mlp, MlpGrads};
use crate::replay::{Record, ReplayBuffer, WalkStep};
use crate::repr::{Embedder, LatentPoint, ReprNet, StateScaler};

/// Anything that can score how reachable latent goals are from states.
pub trait Reachability {
    /// Elementwise `V(states[i], goals[i])`.
    fn values(&self, states: &[StateVec], goals: &[LatentPoint]) -> Vec<f64>;

    fn value(&self, state: &StateVec, goal: &LatentPoint) -> f64 {
        self.values(std::slice::from_ref(state), std::slice::from_ref(goal))[0]
    }
}

/// Fills `buffer` with `episodes` walks of `length` uniform-random actions.
/// Walks ignore the task goal and always run their full length.
pub fn collect_random_walk<R: Rng + ?Sized>(
    spec: &MazeSpec,
    buffer: &mut ReplayBuffer<WalkStep>,
    episodes: usize,
    length: usize,
    rng: &mut R,
) -> Result<()> {
    for ep in 0..episodes as u64 {
        let mut s = spec.reset(ep);
        for t in 0..length {
            let action = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let (next, _, _) = spec.transition(&s, action)?;
            buffer.push(WalkStep { state: s, action, next_state: next, episode_id: ep, step_index: t });
            s = next;
        }
    }
    Ok(())
}

/// State at step `j` of an episode: either a stored record's state or the
/// successor of the record just before it.
pub fn state_at<T: Record>(buffer: &ReplayBuffer<T>, episode: u64, step: usize) -> Option<StateVec> {
    if let Some(r) = buffer.record_at(episode, step) {
        return Some(*r.state());
    }
    step.checked_sub(1).and_then(|p| buffer.record_at(episode, p)).map(|r| *r.next_state())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReachConfig {
    pub horizon_clip: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self { horizon_clip: 50, steps: 20_000, batch_size: 128, learning_rate: 3e-4, hidden: 256 }
    }
}

/// A training pair `(s_i, s_j)` from one trajectory and its target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReachPair {
    pub state: StateVec,
    pub goal_state: StateVec,
    pub separation: usize,
}

impl ReachPair {
    pub fn target(&self, horizon_clip: usize) -> f64 {
        -(self.separation.min(horizon_clip) as f64)
    }
}

/// Same-trajectory pairs with separation drawn uniformly from `0..=max_sep`.
pub fn sample_pairs<T: Record, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<T>,
    n: usize,
    max_sep: usize,
    rng: &mut R,
) -> Result<Vec<ReachPair>> {
    if buffer.is_empty() {
        return Err(LespError::InsufficientData("reachability training needs a non-empty buffer".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(LespError::InsufficientData("could not draw same-trajectory pairs".into()));
        }
        let r = buffer.sample_one(rng)?;
        let sep = rng.random_range(0..=max_sep);
        if let Some(g) = state_at(buffer, r.episode_id(), r.step_index() + sep) {
            out.push(ReachPair { state: *r.state(), goal_state: g, separation: sep });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ReachNet {
    /// Outputs `V / H_max`.
    pub net: Mlp,
    pub horizon_clip: usize,
    pub phi_version_at_training: u64,
    scaler: StateScaler,
}

impl ReachNet {
    pub fn new<R: Rng + ?Sized>(scaler: StateScaler, latent_dim: usize, cfg: &ReachConfig, rng: &mut R) -> Result<Self> {
        if cfg.horizon_clip == 0 {
            return Err(LespError::Config("horizon clip must be positive".into()));
        }
        let net = Mlp::new(&[STATE_DIM + latent_dim, cfg.hidden, cfg.hidden, 1], Activation::Relu, rng)?;
        Ok(Self { net, horizon_clip: cfg.horizon_clip, phi_version_at_training: 0, scaler })
    }

    pub fn from_net(net: Mlp, scaler: StateScaler, horizon_clip: usize) -> Result<Self> {
        if net.input_dim() <= STATE_DIM || net.output_dim() != 1 {
            return Err(LespError::Shape("reach net must map state features plus a latent goal to a scalar".into()));
        }
        Ok(Self { net, horizon_clip, phi_version_at_training: 0, scaler })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim() - STATE_DIM
    }

    fn inputs(&self, states: &[StateVec], goals: &[LatentPoint]) -> Array2<f64> {
        let feats = self.scaler.feature_matrix(states);
        let d = self.latent_dim();
        let g = Array2::from_shape_fn((goals.len(), d), |(i, k)| goals[i].0[k]);
        concatenate(Axis(1), &[feats.view(), g.view()]).expect("row counts agree")
    }

    /// Mean squared error against `targets` and its gradient.
    pub fn loss_and_grad(&self, states: &[StateVec], goals: &[LatentPoint], targets: &[f64]) -> Result<(f64, MlpGrads)> {
        let n = states.len();
        if n == 0 || goals.len() != n || targets.len() != n {
            return Err(LespError::Shape("reach batch fields disagree".into()));
        }
        if goals.iter().any(|g| g.dim() != self.latent_dim()) {
            return Err(LespError::Shape("goal dimension does not match reach net".into()));
        }
        let cache = self.net.forward_cached(self.inputs(states, goals))?;
        let out = cache.output();
        let h = self.horizon_clip as f64;
        let mut loss = 0.0;
        let og = Array2::from_shape_fn((n, 1), |(b, _)| {
            let err = h * out[[b, 0]] - targets[b];
            2.0 * err * h / n as f64
        });
        for b in 0..n {
            let err = h * out[[b, 0]] - targets[b];
            loss += err * err;
        }
        let (grads, _) = self.net.backward_batch(&cache, og.view(), false)?;
        Ok((loss / n as f64, grads))
    }
}

impl Reachability for ReachNet {
    fn values(&self, states: &[StateVec], goals: &[LatentPoint]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        let h = self.horizon_clip as f64;
        self.net
            .forward_batch(self.inputs(states, goals).view())
            .expect("inputs match the network width")
            .column(0)
            .iter()
            .map(|v| h * v)
            .collect()
    }
}

/// Supervised regression of `V` on pairs from `buffer`, embedding goals with
/// the frozen `phi`. Returns the net and the per-step loss curve.
pub fn train_reach<T: Record, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<T>,
    phi: &ReprNet,
    cfg: &ReachConfig,
    rng: &mut R,
) -> Result<(ReachNet, Vec<f64>)> {
    if buffer.is_empty() {
        return Err(LespError::InsufficientData("reachability training needs a non-empty buffer".into()));
    }
    let mut reach = ReachNet::new(phi.scaler(), phi.latent_dim(), cfg, rng)?;
    reach.phi_version_at_training = phi.version();
    let mut opt = Adam::new(&reach.net, cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let pairs = sample_pairs(buffer, cfg.batch_size, cfg.horizon_clip, rng)?;
        let states: Vec<StateVec> = pairs.iter().map(|p| p.state).collect();
        let goal_states: Vec<StateVec> = pairs.iter().map(|p| p.goal_state).collect();
        let goals = phi.embed_many(&goal_states);
        let targets: Vec<f64> = pairs.iter().map(|p| p.target(cfg.horizon_clip)).collect();
        let (loss, grads) = reach.loss_and_grad(&states, &goals, &targets)?;
        if !loss.is_finite() {
            return Err(LespError::NonFinite("reach loss".into()));
        }
        opt.step(&mut reach.net, &grads)?;
        curve.push(loss);
    }
    Ok((reach, curve))
}
