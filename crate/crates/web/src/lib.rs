//! WebAssembly bindings for the browser demo. Everything returns flat
//! numeric arrays; drawing happens on the JavaScript side.

use lesp::envs::{MazeSpec, StateVec};
use lesp::exploration::{min_max_normalize, CountGrid};
use lesp::planner::{build_graph, fps, select_landmark};
use lesp::reach::{collect_random_walk, train_reach, ReachConfig, ReachNet};
use lesp::replay::{ReplayBuffer, WalkStep};
use lesp::repr::{Embedder, LatentPoint, ReprNet, StateScaler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const POOL: usize = 1500;

#[wasm_bindgen]
pub struct Demo {
    spec: MazeSpec,
    walks: ReplayBuffer<WalkStep>,
    next_episode: u64,
    phi: ReprNet,
    reach: Option<ReachNet>,
    l_sel: Option<LatentPoint>,
    rng: ChaCha8Rng,
}

fn err(e: lesp::LespError) -> String {
    e.to_string()
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(env: &str, seed: u64) -> Result<Demo, String> {
        let spec = MazeSpec::builtin(env).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = ReprNet::new(StateScaler::for_spec(&spec), 2, 32, 2.0, 1e-3, &mut rng).map_err(err)?;
        Ok(Demo { spec, walks: ReplayBuffer::new(50_000), next_episode: 0, phi, reach: None, l_sel: None, rng })
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    /// One byte per cell, row-major from the bottom row; 1 marks a wall.
    pub fn walls(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.spec.width * self.spec.height);
        for cy in 0..self.spec.height as i64 {
            for cx in 0..self.spec.width as i64 {
                out.push(u8::from(self.spec.is_wall_cell(cx, cy)));
            }
        }
        out
    }

    /// `[start_x, start_y, goal_x, goal_y, success_radius]`.
    pub fn endpoints(&self) -> Vec<f64> {
        vec![self.spec.start[0], self.spec.start[1], self.spec.goal[0], self.spec.goal[1], self.spec.success_radius]
    }

    /// Adds random-walk episodes and returns their positions as
    /// `x0, y0, x1, y1, ...`, one episode after another.
    pub fn random_walk(&mut self, episodes: usize, length: usize) -> Result<Vec<f64>, String> {
        let mut fresh = ReplayBuffer::new(episodes * length + 1);
        collect_random_walk(&self.spec, &mut fresh, episodes, length, &mut self.rng).map_err(err)?;
        let mut out = Vec::with_capacity(2 * episodes * length);
        for r in fresh.iter() {
            out.extend_from_slice(&r.state.pos);
            let mut r = r.clone();
            r.episode_id += self.next_episode;
            self.walks.push(r);
        }
        self.next_episode += episodes as u64;
        self.reach = None;
        self.l_sel = None;
        Ok(out)
    }

    pub fn walk_count(&self) -> usize {
        self.walks.len()
    }

    /// Fits φ and the reachability net on the stored walks and returns
    /// `[triplet_loss, reach_loss]`.
    pub fn fit(&mut self, repr_steps: usize, reach_steps: usize) -> Result<Vec<f64>, String> {
        let triplet = match self.phi.retrain(&self.walks, 20, repr_steps, 64, &mut self.rng).map_err(err)? {
            lesp::repr::RetrainStatus::Trained { final_loss, .. } => final_loss,
            lesp::repr::RetrainStatus::Skipped { reason } => return Err(reason),
        };
        let cfg = ReachConfig { steps: reach_steps, batch_size: 64, hidden: 64, learning_rate: 1e-3, ..ReachConfig::default() };
        let (reach, curve) = train_reach(&self.walks, &self.phi, &cfg, &mut self.rng).map_err(err)?;
        self.reach = Some(reach);
        Ok(vec![triplet, curve.last().copied().unwrap_or(f64::NAN)])
    }

    /// Landmarks by farthest point sampling plus the planned path from the
    /// start to the goal. Layout: `[n, x, y, ... (n landmarks), m, x, y, ...
    /// (m path nodes), sel_x, sel_y]`; the selected landmark is NaN when no
    /// path exists.
    pub fn plan(&mut self, n_cov: usize, tau: f64) -> Result<Vec<f64>, String> {
        let reach = self.reach.as_ref().ok_or("call fit first")?;
        let step = (self.walks.len() / POOL).max(1);
        let pool: Vec<StateVec> = self.walks.iter().step_by(step).map(|r| r.state).collect();
        if pool.is_empty() {
            return Err("no walks yet".into());
        }
        let latents = self.phi.embed_many(&pool);
        let chosen = fps(&latents, n_cov, 0).map_err(err)?;
        let landmarks: Vec<StateVec> = chosen.iter().map(|&i| pool[i]).collect();
        let start = StateVec::at(self.spec.start[0], self.spec.start[1]);
        let goal = StateVec::at(self.spec.goal[0], self.spec.goal[1]);
        let graph = build_graph(&landmarks, start, goal, reach, &self.phi, tau);
        let sel = select_landmark(&graph, reach, &start);
        let mut out = vec![landmarks.len() as f64];
        for l in &landmarks {
            out.extend_from_slice(&l.pos);
        }
        let path: Vec<usize> = sel.as_ref().map(|s| s.path.clone()).unwrap_or_default();
        out.push(path.len() as f64);
        for &i in &path {
            out.extend_from_slice(&graph.nodes[i].pos);
        }
        match &sel {
            Some(s) => out.extend_from_slice(&graph.nodes[s.node_index].pos),
            None => out.extend_from_slice(&[f64::NAN, f64::NAN]),
        }
        self.l_sel = sel.map(|s| s.latent);
        Ok(out)
    }

    /// Selection score `N + α·P` at `res × res` points spread over the maze,
    /// row-major from the bottom. Novelty counts walk visits in latent cells
    /// of side `cell`; prospect is measured to the landmark from the last
    /// `plan`. Wall points are NaN.
    pub fn heatmap(&self, alpha: f64, res: usize, cell: f64) -> Vec<f64> {
        let mut grid = CountGrid::new(cell);
        let visited: Vec<StateVec> = self.walks.iter().map(|r| r.state).collect();
        for z in self.phi.embed_many(&visited) {
            grid.record_visit(&z);
        }
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let mut probes = Vec::new();
        let mut free = Vec::new();
        for j in 0..res {
            for i in 0..res {
                let p = [(i as f64 + 0.5) * w / res as f64, (j as f64 + 0.5) * h / res as f64];
                if self.spec.is_free(p) {
                    free.push(j * res + i);
                    probes.push(StateVec::at(p[0], p[1]));
                }
            }
        }
        let latents = self.phi.embed_many(&probes);
        let novelty: Vec<f64> = latents.iter().map(|z| -(grid.count(z) as f64)).collect();
        let prospect: Vec<f64> = match &self.l_sel {
            Some(l) => latents.iter().map(|z| -z.distance(l)).collect(),
            None => vec![0.0; latents.len()],
        };
        let (n, p) = (min_max_normalize(&novelty), min_max_normalize(&prospect));
        let mut out = vec![f64::NAN; res * res];
        for (k, &cell) in free.iter().enumerate() {
            out[cell] = n[k] + alpha * p[k];
        }
        out
    }
}
