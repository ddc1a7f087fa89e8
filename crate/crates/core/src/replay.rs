//! Ring-buffer experience storage with a per-episode trajectory index.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::envs::StateVec;
use crate::error::{LespError, Result};
use crate::repr::{Embedder, LatentPoint};

/// A stored record that belongs to one step of one episode.
pub trait Record: Clone {
    fn episode_id(&self) -> u64;
    fn step_index(&self) -> usize;
    fn state(&self) -> &StateVec;
    fn next_state(&self) -> &StateVec;
    fn is_finite(&self) -> bool;
    /// One line of the debug dump; see each type for the field order.
    fn dump_line(&self) -> String;
}

/// Low-level transition. The intrinsic reward recorded at insertion time is
/// kept for reference only; training recomputes it from `(next_state, subgoal)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StateVec,
    pub subgoal: LatentPoint,
    pub action: [f64; 2],
    pub intrinsic_reward: f64,
    pub next_state: StateVec,
    pub done: bool,
    pub episode_id: u64,
    pub step_index: usize,
}

/// One c-step segment seen by the high level.
#[derive(Clone, Debug, PartialEq)]
pub struct HighTransition {
    pub state: StateVec,
    pub chosen_subgoal: LatentPoint,
    pub ext_reward_sum: f64,
    pub next_state: StateVec,
    pub done: bool,
    pub episode_id: u64,
    /// Low-level step at which the segment started.
    pub step_index: usize,
}

/// Random-walk step stored in the pretraining buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkStep {
    pub state: StateVec,
    pub action: [f64; 2],
    pub next_state: StateVec,
    pub episode_id: u64,
    pub step_index: usize,
}

fn fmt_state(s: &StateVec) -> String {
    format!("{},{},{},{}", s.pos[0], s.pos[1], s.vel[0], s.vel[1])
}

fn fmt_latent(z: &LatentPoint) -> String {
    z.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Record for Transition {
    fn episode_id(&self) -> u64 {
        self.episode_id
    }
    fn step_index(&self) -> usize {
        self.step_index
    }
    fn state(&self) -> &StateVec {
        &self.state
    }
    fn next_state(&self) -> &StateVec {
        &self.next_state
    }
    fn is_finite(&self) -> bool {
        self.state.is_finite()
            && self.next_state.is_finite()
            && self.subgoal.is_finite()
            && self.action.iter().all(|a| a.is_finite())
            && self.intrinsic_reward.is_finite()
    }
    /// `episode step x,y,vx,vy subgoal ax,ay intrinsic_reward nx,ny,nvx,nvy done`
    fn dump_line(&self) -> String {
        format!(
            "{} {} {} {} {},{} {} {} {}",
            self.episode_id,
            self.step_index,
            fmt_state(&self.state),
            fmt_latent(&self.subgoal),
            self.action[0],
            self.action[1],
            self.intrinsic_reward,
            fmt_state(&self.next_state),
            self.done as u8
        )
    }
}

impl Record for HighTransition {
    fn episode_id(&self) -> u64 {
        self.episode_id
    }
    fn step_index(&self) -> usize {
        self.step_index
    }
    fn state(&self) -> &StateVec {
        &self.state
    }
    fn next_state(&self) -> &StateVec {
        &self.next_state
    }
    fn is_finite(&self) -> bool {
        self.state.is_finite() && self.next_state.is_finite() && self.chosen_subgoal.is_finite() && self.ext_reward_sum.is_finite()
    }
    /// `episode step x,y,vx,vy subgoal ext_reward_sum nx,ny,nvx,nvy done`
    fn dump_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}",
            self.episode_id,
            self.step_index,
            fmt_state(&self.state),
            fmt_latent(&self.chosen_subgoal),
            self.ext_reward_sum,
            fmt_state(&self.next_state),
            self.done as u8
        )
    }
}

impl Record for WalkStep {
    fn episode_id(&self) -> u64 {
        self.episode_id
    }
    fn step_index(&self) -> usize {
        self.step_index
    }
    fn state(&self) -> &StateVec {
        &self.state
    }
    fn next_state(&self) -> &StateVec {
        &self.next_state
    }
    fn is_finite(&self) -> bool {
        self.state.is_finite() && self.next_state.is_finite() && self.action.iter().all(|a| a.is_finite())
    }
    /// `episode step x,y,vx,vy ax,ay nx,ny,nvx,nvy`
    fn dump_line(&self) -> String {
        format!(
            "{} {} {} {},{} {}",
            self.episode_id,
            self.step_index,
            fmt_state(&self.state),
            self.action[0],
            self.action[1],
            fmt_state(&self.next_state)
        )
    }
}

/// A buffer state that passed the latent-radius filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub state: StateVec,
    pub latent: LatentPoint,
    pub episode_id: u64,
    pub step_index: usize,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    slots: Vec<T>,
    /// Total records ever pushed; record `seq` lives in slot `seq % capacity`.
    pushed: u64,
    /// episode → (step_index, seq), oldest first.
    trajectories: BTreeMap<u64, VecDeque<(usize, u64)>>,
}

impl<T: Record> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, slots: Vec::new(), pushed: 0, trajectories: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn oldest_seq(&self) -> u64 {
        self.pushed - self.slots.len() as u64
    }

    fn by_seq(&self, seq: u64) -> &T {
        &self.slots[(seq % self.capacity as u64) as usize]
    }

    pub fn push(&mut self, record: T) {
        debug_assert!(record.is_finite(), "non-finite record pushed");
        let seq = self.pushed;
        let slot = (seq % self.capacity as u64) as usize;
        if self.slots.len() == self.capacity {
            let (old_ep, old_step) = (self.slots[slot].episode_id(), self.slots[slot].step_index());
            if let Some(steps) = self.trajectories.get_mut(&old_ep) {
                if let Some(pos) = steps.iter().position(|&(s, q)| s == old_step && q == seq - self.capacity as u64) {
                    steps.remove(pos);
                }
                if steps.is_empty() {
                    self.trajectories.remove(&old_ep);
                }
            }
            self.trajectories.entry(record.episode_id()).or_default().push_back((record.step_index(), seq));
            self.slots[slot] = record;
        } else {
            self.trajectories.entry(record.episode_id()).or_default().push_back((record.step_index(), seq));
            self.slots.push(record);
        }
        self.pushed += 1;
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (self.oldest_seq()..self.pushed).map(move |seq| self.by_seq(seq))
    }

    /// `i`-th live record, oldest first.
    pub fn get(&self, i: usize) -> Option<&T> {
        (i < self.len()).then(|| self.by_seq(self.oldest_seq() + i as u64))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&T> {
        if self.is_empty() {
            return Err(LespError::InsufficientData("cannot sample from an empty buffer".into()));
        }
        Ok(self.get(rng.random_range(0..self.len())).unwrap())
    }

    /// `n` records drawn uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn episodes(&self) -> impl Iterator<Item = u64> + '_ {
        self.trajectories.keys().copied()
    }

    /// Stored steps of one episode in insertion order.
    pub fn trajectory(&self, episode: u64) -> Option<Vec<(usize, &T)>> {
        self.trajectories.get(&episode).map(|steps| steps.iter().map(|&(s, q)| (s, self.by_seq(q))).collect())
    }

    pub fn trajectory_steps(&self, episode: u64) -> Option<Vec<usize>> {
        self.trajectories.get(&episode).map(|steps| steps.iter().map(|&(s, _)| s).collect())
    }

    pub fn record_at(&self, episode: u64, step: usize) -> Option<&T> {
        let steps = self.trajectories.get(&episode)?;
        // Steps of an episode are pushed in increasing order.
        let pos = steps.binary_search_by_key(&step, |&(s, _)| s).ok()?;
        Some(self.by_seq(steps[pos].1))
    }

    pub fn contains(&self, episode: u64, step: usize) -> bool {
        self.record_at(episode, step).is_some()
    }

    /// True if some stored trajectory holds `span` consecutive steps.
    pub fn has_segment(&self, span: usize) -> bool {
        let span = span.max(1);
        self.trajectories.values().any(|steps| {
            let mut run = 0usize;
            let mut prev: Option<usize> = None;
            for &(s, _) in steps {
                run = if prev.map(|p| p + 1 == s).unwrap_or(false) { run + 1 } else { 1 };
                if run >= span {
                    return true;
                }
                prev = Some(s);
            }
            false
        })
    }

    /// Up to `max_count` distinct stored states whose current embedding lies
    /// within `r_g` of `center`, visited in a random order.
    pub fn states_within_latent_radius<E: Embedder + ?Sized, R: Rng + ?Sized>(
        &self,
        center: &LatentPoint,
        r_g: f64,
        phi: &E,
        max_count: usize,
        rng: &mut R,
    ) -> Vec<Candidate> {
        const CHUNK: usize = 512;
        let mut out = Vec::new();
        if self.is_empty() || max_count == 0 {
            return out;
        }
        let order = index::sample(rng, self.len(), self.len());
        let order: Vec<usize> = order.into_iter().collect();
        for chunk in order.chunks(CHUNK) {
            let records: Vec<&T> = chunk.iter().map(|&i| self.get(i).unwrap()).collect();
            let states: Vec<StateVec> = records.iter().map(|r| *r.state()).collect();
            let latents = phi.embed_many(&states);
            for (rec, z) in records.into_iter().zip(latents) {
                if z.distance(center) <= r_g {
                    out.push(Candidate { state: *rec.state(), latent: z, episode_id: rec.episode_id(), step_index: rec.step_index() });
                    if out.len() == max_count {
                        return out;
                    }
                }
            }
        }
        out
    }

    /// Writes one record per line, oldest first.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        for r in self.iter() {
            writeln!(out, "{}", r.dump_line())?;
        }
        Ok(())
    }

    /// Structural audit of the trajectory index against the stored records.
    pub fn index_is_consistent(&self) -> bool {
        let mut indexed = 0usize;
        for (&ep, steps) in &self.trajectories {
            if steps.is_empty() {
                return false;
            }
            for &(s, q) in steps {
                if q < self.oldest_seq() || q >= self.pushed {
                    return false;
                }
                let r = self.by_seq(q);
                if r.episode_id() != ep || r.step_index() != s {
                    return false;
                }
                indexed += 1;
            }
        }
        indexed == self.len() && self.iter().all(|r| self.contains(r.episode_id(), r.step_index()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn walk(ep: u64, step: usize, x: f64) -> WalkStep {
        let s = StateVec::at(x, 0.0);
        WalkStep { state: s, action: [0.0, 0.0], next_state: s, episode_id: ep, step_index: step }
    }

    #[test]
    fn push_grows_then_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        b.push(walk(0, 0, 0.0));
        assert_eq!(b.len(), 1);
        for i in 1..4 {
            b.push(walk(0, i, i as f64));
        }
        assert_eq!(b.len(), 3);
        assert!(!b.contains(0, 0));
        assert_eq!(b.trajectory_steps(0).unwrap(), vec![1, 2, 3]);
        assert!(b.index_is_consistent());
    }

    #[test]
    fn trajectory_index_lists_steps_in_order() {
        let mut b = ReplayBuffer::new(10);
        b.push(walk(3, 0, 0.0));
        b.push(walk(7, 0, 0.0));
        b.push(walk(7, 1, 0.0));
        b.push(walk(3, 1, 0.0));
        b.push(walk(7, 2, 0.0));
        // rebuild the index from scratch
        let mut expect: Vec<usize> = Vec::new();
        for r in b.iter() {
            if r.episode_id == 7 {
                expect.push(r.step_index);
            }
        }
        assert_eq!(b.trajectory_steps(7).unwrap(), expect);
        assert_eq!(expect, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_single_record_repeats_it() {
        let mut b = ReplayBuffer::new(5);
        b.push(walk(1, 4, 2.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = b.sample_batch(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|r| r.step_index == 4));
    }

    #[test]
    fn empty_buffer_sampling_errors() {
        let b: ReplayBuffer<WalkStep> = ReplayBuffer::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample_batch(1, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_uniform() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(walk(0, i, i as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample_batch(100, &mut rng).unwrap().iter().map(|r| r.step_index).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for r in b.sample_batch(n, &mut rng).unwrap() {
            counts[r.step_index] += 1;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - n as f64 * 0.1).powi(2) / (n as f64 * 0.1)).sum();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.1).abs() < 3.0 * sigma, "{counts:?}");
        }
        // 9 dof, 99.9% quantile
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn latent_radius_query() {
        let mut b = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = |s: &StateVec| LatentPoint(vec![s.pos[0], s.pos[1]]);
        assert!(b.states_within_latent_radius(&LatentPoint(vec![0.0, 0.0]), 1.0, &phi, 10, &mut rng).is_empty());
        for (i, x) in [0.0, 1.0, 2.0, 5.0, 9.0].iter().enumerate() {
            b.push(walk(0, i, *x));
        }
        let got = b.states_within_latent_radius(&LatentPoint(vec![1.0, 0.0]), 1.5, &phi, 10, &mut rng);
        let mut xs: Vec<f64> = got.iter().map(|c| c.state.pos[0]).collect();
        xs.sort_by(f64::total_cmp);
        // exhaustive oracle
        let want: Vec<f64> = [0.0, 1.0, 2.0, 5.0, 9.0].into_iter().filter(|x: &f64| (x - 1.0).abs() <= 1.5).collect();
        assert_eq!(xs, want);
        let capped = b.states_within_latent_radius(&LatentPoint(vec![1.0, 0.0]), 100.0, &phi, 2, &mut rng);
        assert_eq!(capped.len(), 2);
        let own = b.states_within_latent_radius(&phi(&StateVec::at(9.0, 0.0)), 100.0, &phi, 10, &mut rng);
        assert!(own.iter().any(|c| c.state.pos[0] == 9.0));
    }

    #[test]
    fn dump_writes_one_line_per_record() {
        let mut b = ReplayBuffer::new(4);
        for i in 0..6 {
            b.push(walk(2, i, i as f64));
        }
        let mut out = Vec::new();
        b.dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().starts_with("2 2 2,0,0,0"));
    }

    proptest! {
        #[test]
        fn eviction_keeps_index_consistent(cap in 1usize..20, eps in proptest::collection::vec(0u64..4, 1..120)) {
            let mut b = ReplayBuffer::new(cap);
            let mut next_step = [0usize; 4];
            for ep in eps {
                b.push(walk(ep, next_step[ep as usize], 0.0));
                next_step[ep as usize] += 1;
                prop_assert!(b.index_is_consistent());
                prop_assert!(b.len() <= cap);
            }
        }

        #[test]
        fn radius_results_satisfy_constraint(seed in any::<u64>(), r in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ReplayBuffer::new(64);
            for i in 0..64 {
                b.push(walk(0, i, rng.random_range(-5.0..5.0)));
            }
            let phi = |s: &StateVec| LatentPoint(vec![s.pos[0] * 0.7, 1.0]);
            let center = LatentPoint(vec![0.3, 0.5]);
            for c in b.states_within_latent_radius(&center, r, &phi, 30, &mut rng) {
                let d = ((c.state.pos[0] * 0.7 - 0.3).powi(2) + 0.25).sqrt();
                prop_assert!(d <= r + 1e-12);
            }
        }
    }
}
