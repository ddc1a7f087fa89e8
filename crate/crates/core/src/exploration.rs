//! Exploration measures over candidate subgoals: count-based novelty along a
//! candidate's stored future, prospect toward the selected landmark, and the
//! normalized selection rule.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::Result;
use crate::replay::{Candidate, Record, ReplayBuffer};
use crate::repr::{Embedder, LatentPoint};

/// Visit counts over a regular grid in latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct CountGrid {
    cell_size: f64,
    counts: BTreeMap<Vec<i64>, u64>,
    total: u64,
}

impl CountGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self { cell_size, counts: BTreeMap::new(), total: 0 }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: &LatentPoint) -> Vec<i64> {
        p.0.iter().map(|v| (v / self.cell_size).floor() as i64).collect()
    }

    pub fn record_visit(&mut self, p: &LatentPoint) {
        if !p.is_finite() {
            log::warn!("ignoring visit at non-finite latent point");
            return;
        }
        *self.counts.entry(self.cell_of(p)).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn count(&self, p: &LatentPoint) -> u64 {
        self.counts.get(&self.cell_of(p)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct visited cells.
    pub fn coverage(&self) -> usize {
        self.counts.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Vec<i64>, u64)> + '_ {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn reset(&mut self) {
        self.counts.clear();
        self.total = 0;
    }
}

/// `−Σ_j γ^j n(φ(s_{i+jc}))` over the candidate's own trajectory, stopping at
/// the first step no longer stored. Falls back to `−n(φ(s_i))` when the
/// candidate itself is not indexed.
pub fn novelty<T: Record, E: Embedder + ?Sized>(
    grid: &CountGrid,
    buffer: &ReplayBuffer<T>,
    candidate: &Candidate,
    phi: &E,
    gamma: f64,
    c: usize,
) -> f64 {
    let c = c.max(1);
    let mut states = Vec::new();
    let mut step = candidate.step_index;
    while let Some(r) = buffer.record_at(candidate.episode_id, step) {
        states.push(*r.state());
        step += c;
    }
    if states.is_empty() {
        log::warn!("candidate ({}, {}) is not indexed; using its own cell only", candidate.episode_id, candidate.step_index);
        return -(grid.count(&phi.embed(&candidate.state)) as f64);
    }
    discounted_count(grid, &phi.embed_many(&states), gamma)
}

/// `−Σ_j γ^j n(z_j)`.
pub fn discounted_count(grid: &CountGrid, latents: &[LatentPoint], gamma: f64) -> f64 {
    let mut sum = 0.0;
    let mut w = 1.0;
    for z in latents {
        sum += w * grid.count(z) as f64;
        w *= gamma;
    }
    -sum
}

/// `−‖g − l_sel‖`.
pub fn prospect(g: &LatentPoint, l_sel: &LatentPoint) -> f64 {
    -g.distance(l_sel)
}

/// Min-max scaling to `[0, 1]`; a constant input maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub novelty_raw: f64,
    pub prospect_raw: f64,
    pub novelty_norm: f64,
    pub prospect_norm: f64,
    pub score: f64,
}

/// Scores candidates from precomputed raw measures and returns them with the
/// index of the best one (lowest index among ties). Without a landmark the
/// prospect term is dropped.
pub fn score_candidates(
    candidates: &[Candidate],
    novelty_raw: &[f64],
    l_sel: Option<&LatentPoint>,
    alpha: f64,
) -> Option<(Vec<ScoredCandidate>, usize)> {
    if candidates.is_empty() {
        return None;
    }
    assert_eq!(candidates.len(), novelty_raw.len(), "one novelty value per candidate");
    let prospect_raw: Vec<f64> = match l_sel {
        Some(l) => candidates.iter().map(|c| prospect(&c.latent, l)).collect(),
        None => vec![0.0; candidates.len()],
    };
    let alpha = if l_sel.is_some() { alpha } else { 0.0 };
    let n_norm = min_max_normalize(novelty_raw);
    let p_norm = min_max_normalize(&prospect_raw);
    let scored: Vec<ScoredCandidate> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredCandidate {
            candidate: c.clone(),
            novelty_raw: novelty_raw[i],
            prospect_raw: prospect_raw[i],
            novelty_norm: n_norm[i],
            prospect_norm: p_norm[i],
            score: n_norm[i] + alpha * p_norm[i],
        })
        .collect();
    let mut best = 0;
    for i in 1..scored.len() {
        if scored[i].score > scored[best].score {
            best = i;
        }
    }
    Some((scored, best))
}

/// One exploration decision with everything needed to audit it.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionEvent {
    pub event_id: u64,
    pub env_step: u64,
    pub current_latent: LatentPoint,
    pub l_sel: Option<LatentPoint>,
    pub alpha: f64,
    pub r_g: f64,
    pub scored: Vec<ScoredCandidate>,
    pub chosen: usize,
}

impl SelectionEvent {
    pub fn subgoal(&self) -> &LatentPoint {
        &self.scored[self.chosen].candidate.latent
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionParams {
    pub alpha: f64,
    pub r_g: f64,
    pub gamma: f64,
    pub c: usize,
}

/// Picks the best-scoring candidate. `None` means there was nothing to choose
/// from and the caller should fall back to the high-level policy.
#[allow(clippy::too_many_arguments)]
pub fn select_subgoal<T: Record, E: Embedder + ?Sized>(
    buffer: &ReplayBuffer<T>,
    candidates: Vec<Candidate>,
    current_latent: LatentPoint,
    l_sel: Option<LatentPoint>,
    grid: &CountGrid,
    phi: &E,
    params: SelectionParams,
    event_id: u64,
    env_step: u64,
) -> Option<SelectionEvent> {
    let novelty_raw: Vec<f64> = candidates.iter().map(|c| novelty(grid, buffer, c, phi, params.gamma, params.c)).collect();
    let (scored, chosen) = score_candidates(&candidates, &novelty_raw, l_sel.as_ref(), params.alpha)?;
    Some(SelectionEvent {
        event_id,
        env_step,
        current_latent,
        l_sel,
        alpha: params.alpha,
        r_g: params.r_g,
        scored,
        chosen,
    })
}

pub const EVENT_COLUMNS: [&str; 16] = [
    "event",
    "env_step",
    "candidate",
    "latent_x",
    "latent_y",
    "current_x",
    "current_y",
    "landmark_x",
    "landmark_y",
    "novelty_raw",
    "prospect_raw",
    "novelty_norm",
    "prospect_norm",
    "alpha",
    "score",
    "chosen",
];

/// Appends one CSV row per candidate. Latents beyond two dimensions are not
/// written; missing coordinates and an absent landmark are left empty.
pub fn write_event_rows<W: Write>(out: &mut csv::Writer<W>, ev: &SelectionEvent) -> Result<()> {
    let coord = |z: Option<&LatentPoint>, k: usize| z.and_then(|z| z.0.get(k)).map(|v| v.to_string()).unwrap_or_default();
    for (i, s) in ev.scored.iter().enumerate() {
        out.write_record([
            ev.event_id.to_string(),
            ev.env_step.to_string(),
            i.to_string(),
            coord(Some(&s.candidate.latent), 0),
            coord(Some(&s.candidate.latent), 1),
            coord(Some(&ev.current_latent), 0),
            coord(Some(&ev.current_latent), 1),
            coord(ev.l_sel.as_ref(), 0),
            coord(ev.l_sel.as_ref(), 1),
            s.novelty_raw.to_string(),
            s.prospect_raw.to_string(),
            s.novelty_norm.to_string(),
            s.prospect_norm.to_string(),
            ev.alpha.to_string(),
            s.score.to_string(),
            u8::from(i == ev.chosen).to_string(),
        ])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::StateVec;
    use crate::replay::WalkStep;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pos_phi(s: &StateVec) -> LatentPoint {
        LatentPoint(s.pos.to_vec())
    }

    fn cand(x: f64, y: f64, ep: u64, step: usize) -> Candidate {
        Candidate { state: StateVec::at(x, y), latent: LatentPoint(vec![x, y]), episode_id: ep, step_index: step }
    }

    fn walk(ep: u64, step: usize, x: f64) -> WalkStep {
        WalkStep { state: StateVec::at(x, 0.5), action: [0.0; 2], next_state: StateVec::at(x, 0.5), episode_id: ep, step_index: step }
    }

    #[test]
    fn grid_counts() {
        let mut g = CountGrid::new(2.0);
        let p = LatentPoint(vec![0.5, 0.5]);
        g.record_visit(&p);
        assert_eq!((g.count(&p), g.total()), (1, 1));
        g.record_visit(&LatentPoint(vec![1.9, 0.1]));
        assert_eq!(g.count(&p), 2);
        assert_eq!(g.cell_of(&LatentPoint(vec![-0.1, 4.0])), vec![-1, 2]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = CountGrid::new(2.0);
        for _ in 0..1000 {
            g.record_visit(&LatentPoint(vec![rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]));
        }
        assert_eq!(g.total(), 1000);
        assert_eq!(g.cells().map(|(_, n)| n).sum::<u64>(), 1000);
    }

    #[test]
    fn novelty_examples() {
        // trajectory with states at x = 0, 1, 2, ..., 9; c = 3
        let mut buf = ReplayBuffer::new(100);
        for t in 0..10 {
            buf.push(walk(0, t, 10.0 * t as f64 + 1.0));
        }
        let c = cand(1.0, 0.5, 0, 0);
        let empty = CountGrid::new(2.0);
        assert_eq!(novelty(&empty, &buf, &c, &pos_phi, 0.9, 3), 0.0);

        let mut g = CountGrid::new(2.0);
        // steps 0, 3, 6, 9 sit at x = 1, 31, 61, 91
        for (x, n) in [(1.0, 1), (31.0, 2), (61.0, 3)] {
            for _ in 0..n {
                g.record_visit(&LatentPoint(vec![x, 0.5]));
            }
        }
        assert_eq!(novelty(&g, &buf, &c, &pos_phi, 0.0, 3), -1.0);
        assert_eq!(novelty(&g, &buf, &c, &pos_phi, 0.5, 3), -2.75);
        // candidate not in the buffer: own cell only
        assert_eq!(novelty(&g, &buf, &cand(31.0, 0.5, 7, 0), &pos_phi, 0.5, 3), -2.0);
    }

    #[test]
    fn novelty_truncates_at_missing_steps() {
        let mut buf = ReplayBuffer::new(3);
        for t in 0..5 {
            buf.push(walk(0, t, t as f64 * 4.0));
        }
        // steps 2, 3, 4 remain
        let mut g = CountGrid::new(1.0);
        for x in [8.0, 16.0] {
            g.record_visit(&LatentPoint(vec![x, 0.5]));
        }
        assert_eq!(novelty(&g, &buf, &cand(8.0, 0.5, 0, 2), &pos_phi, 1.0, 2), -2.0);
        assert_eq!(novelty(&g, &buf, &cand(8.0, 0.5, 0, 2), &pos_phi, 1.0, 3), -1.0);
    }

    #[test]
    fn prospect_examples() {
        let l = LatentPoint(vec![3.0, 4.0]);
        assert_eq!(prospect(&l, &l), 0.0);
        assert_eq!(prospect(&LatentPoint(vec![0.0, 0.0]), &l), -5.0);
    }

    #[test]
    fn scoring_examples() {
        let cs = vec![cand(0.0, 0.0, 0, 0), cand(5.0, 0.0, 0, 1)];
        let l = LatentPoint(vec![5.0, 0.0]);
        let (scored, best) = score_candidates(&cs, &[-1.0, -1.0], Some(&l), 0.1).unwrap();
        assert_eq!(best, 1);
        assert_eq!((scored[1].prospect_norm, scored[0].prospect_norm), (1.0, 0.0));
        // alpha 0: novelty alone
        let (_, best) = score_candidates(&cs, &[-1.0, -3.0], Some(&l), 0.0).unwrap();
        assert_eq!(best, 0);
        // no landmark: prospect ignored even with alpha
        let (scored, best) = score_candidates(&cs, &[-2.0, -2.0], None, 5.0).unwrap();
        assert_eq!(best, 0);
        assert!(scored.iter().all(|s| s.score == 0.0));
        assert!(score_candidates(&[], &[], None, 0.1).is_none());
    }

    #[test]
    fn scoring_matches_hand_oracle() {
        // five candidates with chosen raw novelty and prospect
        let l = LatentPoint(vec![0.0, 0.0]);
        let xs = [4.0, 1.0, 8.0, 2.0, 6.0];
        let cs: Vec<Candidate> = xs.iter().enumerate().map(|(i, &x)| cand(x, 0.0, 0, i)).collect();
        let nov = [-10.0, -6.0, -2.0, -8.0, -4.0];
        let (scored, best) = score_candidates(&cs, &nov, Some(&l), 0.1).unwrap();
        // novelty norm: (n + 10) / 8; prospect norm: (8 − x) / 7
        let want: Vec<f64> = (0..5).map(|i| (nov[i] + 10.0) / 8.0 + 0.1 * (8.0 - xs[i]) / 7.0).collect();
        for i in 0..5 {
            assert!((scored[i].score - want[i]).abs() < 1e-12);
        }
        assert_eq!(best, 2);
    }

    #[test]
    fn event_rows_cover_every_candidate() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(walk(0, 0, 1.0));
        let ev = select_subgoal(
            &buf,
            vec![cand(1.0, 0.5, 0, 0), cand(3.0, 0.5, 9, 9)],
            LatentPoint(vec![0.0, 0.0]),
            None,
            &CountGrid::new(2.0),
            &pos_phi,
            SelectionParams { alpha: 0.1, r_g: 20.0, gamma: 0.99, c: 20 },
            4,
            100,
        )
        .unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EVENT_COLUMNS).unwrap();
        write_event_rows(&mut w, &ev).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("4,100,0,1,0.5,0,0,,,"));
    }

    proptest! {
        #[test]
        fn normalization_preserves_order(v in prop::collection::vec(-100.0f64..100.0, 1..30)) {
            let n = min_max_normalize(&v);
            let constant = v.iter().all(|&x| x == v[0]);
            for i in 0..v.len() {
                prop_assert!((0.0..=1.0).contains(&n[i]));
                for j in 0..v.len() {
                    if !constant && v[i] < v[j] {
                        prop_assert!(n[i] <= n[j]);
                    }
                }
            }
        }

        #[test]
        fn extra_visits_never_raise_novelty(extra in prop::collection::vec((0.0f64..40.0, 0.0f64..2.0), 0..30)) {
            let mut buf = ReplayBuffer::new(100);
            for t in 0..40 {
                buf.push(walk(0, t, t as f64));
            }
            let mut g = CountGrid::new(2.0);
            for t in 0..40 {
                g.record_visit(&LatentPoint(vec![t as f64, 0.5]));
            }
            let c = cand(0.0, 0.5, 0, 0);
            let before = novelty(&g, &buf, &c, &pos_phi, 0.9, 4);
            for (x, y) in extra {
                g.record_visit(&LatentPoint(vec![x, y]));
            }
            prop_assert!(novelty(&g, &buf, &c, &pos_phi, 0.9, 4) <= before);
        }
    }
}
