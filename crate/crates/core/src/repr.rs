//! Subgoal representation φ: raw state → latent goal space, trained with a
//! slow-feature triplet loss over `(s_t, s_{t+1}, s_{t+c})`.

use ndarray::Array2;
use rand::Rng;

use crate::envs::{MazeSpec, StateVec, STATE_DIM};
use crate::error::{LespError, Result};
use crate::nn::{Activation, Adam, Mlp, MlpGrads};
use crate::replay::{Record, ReplayBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &LatentPoint) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for LatentPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Anything that maps states into the latent goal space.
pub trait Embedder {
    fn embed_many(&self, states: &[StateVec]) -> Vec<LatentPoint>;

    fn embed(&self, state: &StateVec) -> LatentPoint {
        self.embed_many(std::slice::from_ref(state)).pop().expect("one embedding per state")
    }
}

impl<F: Fn(&StateVec) -> LatentPoint> Embedder for F {
    fn embed_many(&self, states: &[StateVec]) -> Vec<LatentPoint> {
        states.iter().map(self).collect()
    }
}

/// Maps raw states to network inputs for a given maze.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateScaler {
    pub width: f64,
    pub height: f64,
}

impl StateScaler {
    pub fn for_spec(spec: &MazeSpec) -> Self {
        Self { width: spec.width as f64, height: spec.height as f64 }
    }

    pub fn features(&self, s: &StateVec) -> [f64; STATE_DIM] {
        [
            2.0 * s.pos[0] / self.width - 1.0,
            2.0 * s.pos[1] / self.height - 1.0,
            s.vel[0] / crate::envs::V_MAX,
            s.vel[1] / crate::envs::V_MAX,
        ]
    }

    pub fn feature_matrix(&self, states: &[StateVec]) -> Array2<f64> {
        let mut x = Array2::zeros((states.len(), STATE_DIM));
        for (mut row, s) in x.rows_mut().into_iter().zip(states) {
            for (dst, v) in row.iter_mut().zip(self.features(s)) {
                *dst = v;
            }
        }
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub anchor: StateVec,
    pub next: StateVec,
    pub far: StateVec,
    pub anchor_step: usize,
    pub next_step: usize,
    pub far_step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RetrainStatus {
    Trained { steps: usize, final_loss: f64 },
    Skipped { reason: String },
}

#[derive(Clone, Debug)]
pub struct ReprNet {
    pub net: Mlp,
    pub margin: f64,
    scaler: StateScaler,
    version: u64,
    optimizer: Adam,
}

impl ReprNet {
    pub fn new<R: Rng + ?Sized>(
        scaler: StateScaler,
        latent_dim: usize,
        hidden: usize,
        margin: f64,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::new(&[STATE_DIM, hidden, latent_dim], Activation::Relu, rng)?;
        Ok(Self::from_net(net, scaler, margin, learning_rate))
    }

    pub fn from_net(net: Mlp, scaler: StateScaler, margin: f64, learning_rate: f64) -> Self {
        let optimizer = Adam::new(&net, learning_rate);
        Self { net, margin, scaler, version: 0, optimizer }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn scaler(&self) -> StateScaler {
        self.scaler
    }

    fn embed_matrix(&self, states: &[StateVec]) -> Array2<f64> {
        self.net
            .forward_batch(self.scaler.feature_matrix(states).view())
            .expect("scaler produces the network input width")
    }

    /// Mean over the batch of `‖φ(s_t) − φ(s_{t+1})‖ + max(0, δ − ‖φ(s_t) − φ(s_{t+c})‖)`.
    pub fn triplet_loss(&self, triples: &[Triple], c: usize) -> Result<f64> {
        Ok(self.triplet_loss_and_grad(triples, c)?.0)
    }

    pub fn triplet_loss_and_grad(&self, triples: &[Triple], c: usize) -> Result<(f64, MlpGrads)> {
        if triples.is_empty() {
            return Err(LespError::InvalidArgument("empty triple batch".into()));
        }
        for t in triples {
            if t.next_step != t.anchor_step + 1 || t.far_step != t.anchor_step + c {
                return Err(LespError::InvalidArgument(format!(
                    "triple steps ({}, {}, {}) are not (t, t+1, t+{c})",
                    t.anchor_step, t.next_step, t.far_step
                )));
            }
        }
        let n = triples.len();
        let mut states = Vec::with_capacity(3 * n);
        states.extend(triples.iter().map(|t| t.anchor));
        states.extend(triples.iter().map(|t| t.next));
        states.extend(triples.iter().map(|t| t.far));
        let cache = self.net.forward_cached(self.scaler.feature_matrix(&states))?;
        let z = cache.output();
        let dz = z.ncols();
        let mut grad = Array2::zeros(z.dim());
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        for b in 0..n {
            let (ia, inext, ifar) = (b, n + b, 2 * n + b);
            let near: Vec<f64> = (0..dz).map(|k| z[[ia, k]] - z[[inext, k]]).collect();
            let near_norm = near.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += near_norm;
            if near_norm > 0.0 {
                for k in 0..dz {
                    let g = near[k] / near_norm * inv_n;
                    grad[[ia, k]] += g;
                    grad[[inext, k]] -= g;
                }
            }
            let far: Vec<f64> = (0..dz).map(|k| z[[ia, k]] - z[[ifar, k]]).collect();
            let far_norm = far.iter().map(|v| v * v).sum::<f64>().sqrt();
            let hinge = self.margin - far_norm;
            if hinge > 0.0 {
                total += hinge;
                if far_norm > 0.0 {
                    for k in 0..dz {
                        let g = far[k] / far_norm * inv_n;
                        grad[[ia, k]] -= g;
                        grad[[ifar, k]] += g;
                    }
                }
            }
        }
        let (grads, _) = self.net.backward_batch(&cache, grad.view(), false)?;
        Ok((total * inv_n, grads))
    }

    /// Warm-started retraining on triples drawn from the buffer's trajectories.
    /// The version is bumped on every call that does not skip.
    pub fn retrain<T: Record, R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer<T>,
        c: usize,
        steps: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<RetrainStatus> {
        if !buffer.has_segment(c) {
            let reason = format!("no stored trajectory spans {c} steps");
            log::warn!("representation retrain skipped: {reason}");
            return Ok(RetrainStatus::Skipped { reason });
        }
        let mut final_loss = f64::NAN;
        for _ in 0..steps {
            let triples = sample_triples(buffer, c, batch_size, rng)?;
            let (loss, grads) = self.triplet_loss_and_grad(&triples, c)?;
            if !loss.is_finite() {
                return Err(LespError::NonFinite("triplet loss".into()));
            }
            self.optimizer.step(&mut self.net, &grads)?;
            final_loss = loss;
        }
        self.version += 1;
        Ok(RetrainStatus::Trained { steps, final_loss })
    }
}

impl Embedder for ReprNet {
    fn embed_many(&self, states: &[StateVec]) -> Vec<LatentPoint> {
        if states.is_empty() {
            return Vec::new();
        }
        self.embed_matrix(states).rows().into_iter().map(|r| LatentPoint(r.to_vec())).collect()
    }
}

/// Draws `n` triples `(s_t, s_{t+1}, s_{t+c})` from single trajectories.
pub fn sample_triples<T: Record, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<T>,
    c: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(n);
    let max_tries = 1000 * n.max(1);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > max_tries {
            return Err(LespError::InsufficientData(format!("could not find trajectories spanning {c} steps")));
        }
        let rec = buffer.sample_one(rng)?;
        let (ep, i) = (rec.episode_id(), rec.step_index());
        let Some(last) = buffer.record_at(ep, i + c - 1) else { continue };
        out.push(Triple {
            anchor: *rec.state(),
            next: *rec.next_state(),
            far: *last.next_state(),
            anchor_step: i,
            next_step: i + 1,
            far_step: i + c,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scaler() -> StateScaler {
        StateScaler { width: 10.0, height: 10.0 }
    }

    fn triple(a: [f64; 2], b: [f64; 2], c: [f64; 2], step: usize, span: usize) -> Triple {
        Triple {
            anchor: StateVec::at(a[0], a[1]),
            next: StateVec::at(b[0], b[1]),
            far: StateVec::at(c[0], c[1]),
            anchor_step: step,
            next_step: step + 1,
            far_step: step + span,
        }
    }

    /// Latent = the raw (x, y) position: identity on the first two
    /// features after undoing the scaler's affine map.
    fn position_repr(margin: f64) -> ReprNet {
        let mut w = Array2::zeros((STATE_DIM, 2));
        w[[0, 0]] = 5.0;
        w[[1, 1]] = 5.0;
        let net = Mlp::from_parts(&[STATE_DIM, 2], Activation::Identity, vec![w], vec![Array1::from(vec![5.0, 5.0])]).unwrap();
        ReprNet::from_net(net, scaler(), margin, 1e-3)
    }

    #[test]
    fn zero_net_embeds_to_origin() {
        let net = Mlp::zeros(&[STATE_DIM, 100, 2], Activation::Relu).unwrap();
        let r = ReprNet::from_net(net, scaler(), 2.0, 1e-4);
        assert_eq!(r.embed(&StateVec::at(3.0, 4.0)), LatentPoint(vec![0.0, 0.0]));
    }

    #[test]
    fn embedding_is_deterministic_and_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = ReprNet::new(scaler(), 2, 100, 2.0, 1e-4, &mut rng).unwrap();
        let s = StateVec { pos: [2.0, 7.5], vel: [0.3, -0.1] };
        assert_eq!(r.embed(&s), r.embed(&s));
        let direct = r.net.forward(&scaler().features(&s)).unwrap();
        assert_eq!(r.embed(&s).0, direct);
    }

    #[test]
    fn position_repr_is_identity() {
        let r = position_repr(2.0);
        let z = r.embed(&StateVec::at(3.0, 4.0));
        assert!((z.0[0] - 3.0).abs() < 1e-12 && (z.0[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_triplet_loss() {
        let r = position_repr(2.0);
        // phi(s_t)=(0,0), phi(s_t+1)=(1,0), phi(s_t+c)=(0,0): 1 + max(0, 2 - 0) = 3
        let t = triple([0.0, 0.0], [1.0, 0.0], [0.0, 0.0], 4, 20);
        assert!((r.triplet_loss(&[t], 20).unwrap() - 3.0).abs() < 1e-12);
        // both terms vanish
        let t = triple([1.0, 1.0], [1.0, 1.0], [4.0, 1.0], 0, 20);
        assert_eq!(r.triplet_loss(&[t], 20).unwrap(), 0.0);
    }

    #[test]
    fn malformed_spacing_is_rejected() {
        let r = position_repr(2.0);
        let mut t = triple([0.0, 0.0], [1.0, 0.0], [0.0, 0.0], 4, 20);
        t.far_step = 30;
        assert!(matches!(r.triplet_loss(&[t], 20), Err(LespError::InvalidArgument(_))));
    }

    #[test]
    fn triplet_loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let r = ReprNet::new(scaler(), 2, 16, 2.0, 1e-4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let ts: Vec<Triple> = (0..8)
                .map(|_| {
                    let mut p = || [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
                    triple(p(), p(), p(), 0, 5)
                })
                .collect();
            assert!(r.triplet_loss(&ts, 5).unwrap() >= 0.0);
        }
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut r = ReprNet::new(scaler(), 2, 10, 2.0, 1e-4, &mut rng).unwrap();
        let ts: Vec<Triple> = (0..6)
            .map(|_| {
                let mut p = || [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
                triple(p(), p(), p(), 2, 3)
            })
            .collect();
        let (_, g) = r.triplet_loss_and_grad(&ts, 3).unwrap();
        let base = r.net.flat_params();
        let h = 1e-5;
        for (i, &a) in g.flatten().iter().enumerate() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            r.net.set_flat_params(&p).unwrap();
            let up = r.triplet_loss(&ts, 3).unwrap();
            p[i] = base[i] - h;
            r.net.set_flat_params(&p).unwrap();
            let down = r.triplet_loss(&ts, 3).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - a).abs() <= 1e-6f64.max(1e-3 * fd.abs()), "param {i}: fd {fd} analytic {a}");
        }
    }

    #[test]
    fn zero_step_retrain_bumps_version_only() {
        use crate::replay::{ReplayBuffer, WalkStep};
        let mut buf = ReplayBuffer::new(100);
        for t in 0..30 {
            let s = StateVec::at(t as f64 * 0.1, 1.0);
            buf.push(WalkStep { state: s, action: [0.0, 0.0], next_state: s, episode_id: 0, step_index: t });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReprNet::new(scaler(), 2, 8, 2.0, 1e-3, &mut rng).unwrap();
        let before = r.net.clone();
        let status = r.retrain(&buf, 5, 0, 16, &mut rng).unwrap();
        assert!(matches!(status, RetrainStatus::Trained { steps: 0, .. }));
        assert_eq!(r.net, before);
        assert_eq!(r.version(), 1);
        // trajectory too short for c = 40
        let status = r.retrain(&buf, 40, 10, 16, &mut rng).unwrap();
        assert!(matches!(status, RetrainStatus::Skipped { .. }));
        assert_eq!(r.version(), 1);
    }
}
