//! Landmark planning: farthest-point sampling in latent space, a directed
//! reachability graph with an edge threshold, shortest paths, and the choice
//! of the landmark to steer exploration toward.

use std::io::Write;

use ndarray::Array2;

use crate::envs::StateVec;
use crate::error::{LespError, Result};
use crate::reach::Reachability;
use crate::repr::{Embedder, LatentPoint};

/// Greedy max-min selection of `min(k, n)` indices starting at `seed_index`.
/// Ties go to the lowest index.
pub fn fps(points: &[LatentPoint], k: usize, seed_index: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(LespError::InvalidArgument("farthest point sampling needs points".into()));
    }
    if k == 0 {
        return Err(LespError::InvalidArgument("farthest point sampling needs k >= 1".into()));
    }
    if seed_index >= points.len() {
        return Err(LespError::InvalidArgument(format!("seed index {seed_index} out of range")));
    }
    let k = k.min(points.len());
    let mut chosen = vec![seed_index];
    let mut taken = vec![false; points.len()];
    taken[seed_index] = true;
    let mut min_dist: Vec<f64> = points.iter().map(|p| p.distance(&points[seed_index])).collect();
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..points.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k is capped by the point count");
        chosen.push(b);
        taken[b] = true;
        for i in 0..points.len() {
            let d = points[i].distance(&points[b]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug)]
pub struct LandmarkGraph {
    /// Landmarks, then the goal, then the current state.
    pub nodes: Vec<StateVec>,
    /// Embeddings of `nodes` under the φ used to build the graph.
    pub latents: Vec<LatentPoint>,
    /// `weights[[i, j]]` is the cost of the edge `i → j`, infinite when absent.
    pub weights: Array2<f64>,
    pub tau: f64,
}

impl LandmarkGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn goal_node(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn current_node(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `i j weight` per finite edge, then a `path` line.
    pub fn write_edges<W: Write>(&self, mut out: W, path: Option<&[usize]>) -> Result<()> {
        writeln!(out, "# nodes {} goal {} current {} tau {}", self.len(), self.goal_node(), self.current_node(), self.tau)?;
        for i in 0..self.len() {
            let p = self.nodes[i].pos;
            writeln!(out, "node {i} {} {}", p[0], p[1])?;
        }
        for ((i, j), &w) in self.weights.indexed_iter() {
            if w.is_finite() {
                writeln!(out, "{i} {j} {w}")?;
            }
        }
        match path {
            Some(p) => writeln!(out, "path {}", p.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "))?,
            None => writeln!(out, "path none")?,
        }
        Ok(())
    }
}

/// Nodes are `landmarks ∪ {goal_state, current}`; each ordered pair gets
/// `max(0, −V(n_i, φ(n_j)))` when that is at most `tau`, otherwise no edge.
pub fn build_graph<V: Reachability + ?Sized, E: Embedder + ?Sized>(
    landmarks: &[StateVec],
    current: StateVec,
    goal_state: StateVec,
    reach: &V,
    phi: &E,
    tau: f64,
) -> LandmarkGraph {
    let mut nodes = landmarks.to_vec();
    nodes.push(goal_state);
    nodes.push(current);
    let latents = phi.embed_many(&nodes);
    let n = nodes.len();
    let mut states = Vec::with_capacity(n * n);
    let mut goals = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            states.push(nodes[i]);
            goals.push(latents[j].clone());
        }
    }
    let values = reach.values(&states, &goals);
    let weights = Array2::from_shape_fn((n, n), |(i, j)| {
        let w = (-values[i * n + j]).max(0.0);
        if i != j && w <= tau {
            w
        } else {
            f64::INFINITY
        }
    });
    LandmarkGraph { nodes, latents, weights, tau }
}

/// Dijkstra over a dense weight matrix. Among equal tentative costs the
/// lowest node index is settled first; a label only changes on strict
/// improvement.
pub fn shortest_path(weights: &Array2<f64>, src: usize, dst: usize) -> Option<(Vec<usize>, f64)> {
    let n = weights.nrows();
    if src >= n || dst >= n {
        return None;
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    loop {
        let mut u = None;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && u.is_none_or(|b: usize| dist[i] < dist[b]) {
                u = Some(i);
            }
        }
        let Some(u) = u else { break };
        if u == dst {
            break;
        }
        done[u] = true;
        for v in 0..n {
            let w = weights[[u, v]];
            if !done[v] && v != u && w.is_finite() && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                prev[v] = u;
            }
        }
    }
    if !dist[dst].is_finite() {
        return None;
    }
    let mut path = vec![dst];
    while *path.last().unwrap() != src {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Some((path, dist[dst]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedLandmark {
    pub latent: LatentPoint,
    pub node_index: usize,
    pub path: Vec<usize>,
    pub cost: f64,
}

/// Plans from the current-state node to the goal node and returns the path
/// node (other than the current state) that is most reachable from `current`.
/// `None` when the goal is unreachable in the graph.
pub fn select_landmark<V: Reachability + ?Sized>(graph: &LandmarkGraph, reach: &V, current: &StateVec) -> Option<SelectedLandmark> {
    let (path, cost) = shortest_path(&graph.weights, graph.current_node(), graph.goal_node())?;
    let candidates: Vec<usize> = path.iter().copied().filter(|&n| n != graph.current_node()).collect();
    let states = vec![*current; candidates.len()];
    let goals: Vec<LatentPoint> = candidates.iter().map(|&n| graph.latents[n].clone()).collect();
    let values = reach.values(&states, &goals);
    let mut best = 0;
    for i in 1..candidates.len() {
        if -values[i] < -values[best] {
            best = i;
        }
    }
    let node_index = candidates[best];
    Some(SelectedLandmark { latent: graph.latents[node_index].clone(), node_index, path, cost })
}
