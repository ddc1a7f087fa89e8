use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, RngCore};

use crate::envs::{MazeSpec, StateVec, ACTION_DIM, STATE_DIM};
use crate::error::{LespError, Result};
use crate::nn::Mlp;
use crate::policy::{ActMode, SacAgent, SacConfig};
use crate::reach::ReachNet;
use crate::repr::{Embedder, LatentPoint, ReprNet, StateScaler};

const AGENT_MAGIC: &str = "lesp-agent 1";
const BOX_LIMIT: f64 = 1.0 - 1e-6;

/// Axis-aligned bounds of observed embeddings; maps high-level actions in
/// `[-1, 1]^d` onto latent points and back.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LatentBox {
    pub fn from_points(points: &[LatentPoint], dim: usize) -> Self {
        let mut b = Self { lo: vec![f64::INFINITY; dim], hi: vec![f64::NEG_INFINITY; dim] };
        for p in points {
            b.extend(p);
        }
        if points.is_empty() {
            b.lo = vec![-1.0; dim];
            b.hi = vec![1.0; dim];
        }
        b
    }

    pub fn extend(&mut self, p: &LatentPoint) {
        for (k, &v) in p.0.iter().enumerate() {
            self.lo[k] = self.lo[k].min(v);
            self.hi[k] = self.hi[k].max(v);
        }
    }

    fn centre_half(&self, k: usize) -> (f64, f64) {
        (0.5 * (self.lo[k] + self.hi[k]), (0.5 * (self.hi[k] - self.lo[k])).max(1e-6))
    }

    pub fn to_latent(&self, action: &[f64]) -> LatentPoint {
        LatentPoint(
            action
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let (c, h) = self.centre_half(k);
                    c + h * a
                })
                .collect(),
        )
    }

    pub fn to_action(&self, z: &LatentPoint) -> Vec<f64> {
        z.0.iter()
            .enumerate()
            .map(|(k, v)| {
                let (c, h) = self.centre_half(k);
                ((v - c) / h).clamp(-BOX_LIMIT, BOX_LIMIT)
            })
            .collect()
    }

    pub fn contains(&self, z: &LatentPoint) -> bool {
        z.0.iter().enumerate().all(|(k, v)| (self.lo[k]..=self.hi[k]).contains(v))
    }
}

/// Low-level policy input: state features followed by `g − φ(s)`.
pub fn low_input(scaler: &StateScaler, s: &StateVec, z: &LatentPoint, g: &LatentPoint) -> Vec<f64> {
    let mut x = scaler.features(s).to_vec();
    x.extend(g.0.iter().zip(&z.0).map(|(g, z)| g - z));
    x
}

/// Everything a trained hierarchy needs to act.
#[derive(Clone, Debug)]
pub struct HierarchicalAgent {
    pub low: SacAgent,
    pub high: SacAgent,
    pub phi: ReprNet,
    pub latent_box: LatentBox,
    pub c: usize,
}

impl HierarchicalAgent {
    pub fn scaler(&self) -> StateScaler {
        self.phi.scaler()
    }

    /// Subgoal proposed by the high-level policy.
    pub fn propose<R: Rng + ?Sized>(&self, s: &StateVec, mode: ActMode, rng: &mut R) -> Result<LatentPoint> {
        let (a, _) = self.high.act(&self.scaler().features(s), mode, rng)?;
        Ok(self.latent_box.to_latent(&a))
    }

    pub fn low_action<R: Rng + ?Sized>(
        &self,
        s: &StateVec,
        z: &LatentPoint,
        g: &LatentPoint,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<[f64; 2]> {
        let (a, _) = self.low.act(&low_input(&self.scaler(), s, z, g), mode, rng)?;
        Ok([a[0], a[1]])
    }

    /// Writes every network plus a `meta.txt` header into `dir`.
    pub fn save(&self, dir: &Path, reach: Option<&ReachNet>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let nets: [(&str, &Mlp); 9] = [
            ("low_actor", &self.low.actor),
            ("low_critic", &self.low.critic),
            ("low_target", &self.low.target_critic),
            ("low_snapshot", &self.low.snapshot_critic),
            ("high_actor", &self.high.actor),
            ("high_critic", &self.high.critic),
            ("high_target", &self.high.target_critic),
            ("high_snapshot", &self.high.snapshot_critic),
            ("phi", &self.phi.net),
        ];
        for (name, net) in nets {
            net.write_text(BufWriter::new(fs::File::create(dir.join(format!("{name}.txt")))?))?;
        }
        if let Some(r) = reach {
            r.net.write_text(BufWriter::new(fs::File::create(dir.join("reach.txt"))?))?;
        }
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let low = self.low.config();
        let meta = format!(
            "{AGENT_MAGIC}\ncontroller=hierarchical\nc={}\ngamma={}\nsac_temperature={}\nlow_critic_updates={}\nhigh_critic_updates={}\nphi_version={}\nrepr_margin={}\nbox_lo={}\nbox_hi={}\nhorizon_clip={}\n",
            self.c,
            low.gamma,
            low.temperature,
            self.low.critic_updates(),
            self.high.critic_updates(),
            self.phi.version(),
            self.phi.margin,
            join(&self.latent_box.lo),
            join(&self.latent_box.hi),
            reach.map(|r| r.horizon_clip).unwrap_or(0),
        );
        fs::write(dir.join("meta.txt"), meta)?;
        Ok(())
    }

    /// Loads a hierarchy written by [`HierarchicalAgent::save`]. Optimizer
    /// state is not stored; a loaded agent is meant for evaluation.
    pub fn load(dir: &Path, spec: &MazeSpec) -> Result<Self> {
        let meta = read_meta(dir)?;
        let field = |k: &str| meta.iter().find(|(mk, _)| mk == k).map(|(_, v)| v.as_str()).ok_or_else(|| LespError::Parse(format!("checkpoint meta lacks {k}")));
        let num = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| LespError::Parse(format!("bad {k} in checkpoint meta"))) };
        let list = |k: &str| -> Result<Vec<f64>> {
            field(k)?.split(',').map(|t| t.parse().map_err(|_| LespError::Parse(format!("bad {k} in checkpoint meta")))).collect()
        };
        let net = |name: &str| -> Result<Mlp> { Mlp::read_text(BufReader::new(fs::File::open(dir.join(format!("{name}.txt")))?)) };
        let sac = |actor: Mlp, critic: Mlp| -> Result<SacAgent> {
            let obs = actor.input_dim();
            let act = actor.output_dim() / 2;
            let mut cfg = SacConfig::new(obs, act);
            cfg.gamma = num("gamma")?;
            cfg.temperature = num("sac_temperature")?;
            cfg.hidden = actor.sizes()[1..actor.sizes().len() - 1].to_vec();
            SacAgent::from_nets(cfg, actor, critic)
        };
        let mut low = sac(net("low_actor")?, net("low_critic")?)?;
        low.target_critic = net("low_target")?;
        low.snapshot_critic = net("low_snapshot")?;
        let mut high = sac(net("high_actor")?, net("high_critic")?)?;
        high.target_critic = net("high_target")?;
        high.snapshot_critic = net("high_snapshot")?;
        let phi = ReprNet::from_net(net("phi")?, StateScaler::for_spec(spec), num("repr_margin")?, 1e-4);
        if phi.net.input_dim() != STATE_DIM || high.actor.input_dim() != STATE_DIM || low.config().action_dim != ACTION_DIM {
            return Err(LespError::Shape("checkpoint networks do not fit this environment".into()));
        }
        let latent_box = LatentBox { lo: list("box_lo")?, hi: list("box_hi")? };
        let c = num("c")? as usize;
        Ok(Self { low, high, phi, latent_box, c })
    }
}

/// `key=value` lines of a checkpoint's `meta.txt`.
pub fn read_meta(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join("meta.txt");
    let text = fs::read_to_string(&path).map_err(|e| LespError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(AGENT_MAGIC) {
        return Err(LespError::Parse(format!("{} is not an agent checkpoint", path.display())));
    }
    Ok(lines
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Anything that can drive the point mass through an episode.
pub trait Controller {
    fn begin_episode(&mut self);
    fn act(&mut self, state: &StateVec, t: usize, rng: &mut dyn RngCore) -> Result<[f64; 2]>;
}

/// Deterministic hierarchical policy: no exploration branch, no learning.
pub struct HierarchicalController<'a> {
    agent: &'a HierarchicalAgent,
    subgoal: Option<LatentPoint>,
}

impl<'a> HierarchicalController<'a> {
    pub fn new(agent: &'a HierarchicalAgent) -> Self {
        Self { agent, subgoal: None }
    }
}

impl Controller for HierarchicalController<'_> {
    fn begin_episode(&mut self) {
        self.subgoal = None;
    }

    fn act(&mut self, state: &StateVec, t: usize, rng: &mut dyn RngCore) -> Result<[f64; 2]> {
        if t % self.agent.c == 0 || self.subgoal.is_none() {
            self.subgoal = Some(self.agent.propose(state, ActMode::Deterministic, rng)?);
        }
        let z = self.agent.phi.embed(state);
        let g = self.subgoal.as_ref().expect("set above");
        self.agent.low_action(state, &z, g, ActMode::Deterministic, rng)
    }
}

/// Follows a list of waypoints with a velocity-tracking rule.
#[derive(Clone, Debug)]
pub struct WaypointController {
    pub waypoints: Vec<[f64; 2]>,
    next: usize,
}

impl WaypointController {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Self {
        Self { waypoints, next: 0 }
    }

    /// Parses `x,y;x,y;...`.
    pub fn parse(text: &str) -> Result<Self> {
        let pts = text
            .split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                let (x, y) = t.split_once(',').ok_or_else(|| LespError::Parse(format!("bad waypoint {t:?}")))?;
                let p = |v: &str| v.trim().parse::<f64>().map_err(|_| LespError::Parse(format!("bad waypoint {t:?}")));
                Ok([p(x)?, p(y)?])
            })
            .collect::<Result<Vec<_>>>()?;
        if pts.is_empty() {
            return Err(LespError::Parse("no waypoints".into()));
        }
        Ok(Self::new(pts))
    }
}

impl Controller for WaypointController {
    fn begin_episode(&mut self) {
        self.next = 0;
    }

    fn act(&mut self, state: &StateVec, _: usize, _: &mut dyn RngCore) -> Result<[f64; 2]> {
        let dist = |w: [f64; 2]| ((w[0] - state.pos[0]).powi(2) + (w[1] - state.pos[1]).powi(2)).sqrt();
        while self.next + 1 < self.waypoints.len() && dist(self.waypoints[self.next]) < 0.4 {
            self.next += 1;
        }
        let w = self.waypoints[self.next];
        let mut a = [0.0; 2];
        for k in 0..2 {
            let want = ((w[k] - state.pos[k]) * 0.3).clamp(-0.6, 0.6);
            a[k] = ((want - 0.9 * state.vel[k]) / 0.5).clamp(-1.0, 1.0);
        }
        Ok(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub episodes: usize,
    pub mean_steps: f64,
}

/// Fraction of `episodes` in which `controller` reaches the goal.
pub fn evaluate(spec: &MazeSpec, controller: &mut dyn Controller, episodes: usize, rng: &mut dyn RngCore) -> Result<EvalReport> {
    let mut successes = 0usize;
    let mut steps = 0usize;
    for ep in 0..episodes {
        controller.begin_episode();
        let mut s = spec.reset(ep as u64);
        for t in 0..spec.horizon {
            let a = controller.act(&s, t, rng)?;
            let (next, _, success) = spec.transition(&s, a)?;
            steps += 1;
            s = next;
            if success {
                successes += 1;
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalReport { success_rate: successes as f64 / n, episodes, mean_steps: steps as f64 / n })
}

/// Waypoints through the corridors of each built-in maze, used as a
/// scripted reference controller.
pub fn reference_waypoints(env: &str) -> Option<Vec<[f64; 2]>> {
    match env {
        "u_maze" => Some(vec![[1.0, 1.5], [7.0, 1.5], [7.0, 6.5], [1.0, 6.5]]),
        "four_rooms" => Some(vec![[1.5, 4.0], [9.5, 4.0], [13.0, 4.0], [13.0, 10.0], [16.0, 16.0]]),
        "w_maze" => Some(vec![[14.0, 1.0], [26.0, 3.0], [26.0, 27.0], [14.0, 27.0], [14.0, 14.0]]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_maps_both_ways() {
        let b = LatentBox::from_points(&[LatentPoint(vec![-2.0, 0.0]), LatentPoint(vec![4.0, 10.0])], 2);
        assert_eq!(b.to_latent(&[0.0, 0.0]), LatentPoint(vec![1.0, 5.0]));
        assert_eq!(b.to_latent(&[1.0, -1.0]), LatentPoint(vec![4.0, 0.0]));
        let a = b.to_action(&LatentPoint(vec![2.5, 7.5]));
        assert_eq!(a, vec![0.5, 0.5]);
        assert!(b.to_action(&LatentPoint(vec![100.0, -100.0])).iter().all(|v| v.abs() < 1.0));
        assert!(b.contains(&LatentPoint(vec![0.0, 1.0])));
    }

    #[test]
    fn waypoint_reference_solves_builtins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for env in ["u_maze", "four_rooms", "w_maze"] {
            let spec = MazeSpec::builtin(env).unwrap();
            let mut ctl = WaypointController::new(reference_waypoints(env).unwrap());
            let r = evaluate(&spec, &mut ctl, 3, &mut rng).unwrap();
            assert_eq!(r.success_rate, 1.0, "{env}");
        }
    }

    #[test]
    fn waypoint_text_parses() {
        let w = WaypointController::parse("1,1.5; 7,1.5;").unwrap();
        assert_eq!(w.waypoints, vec![[1.0, 1.5], [7.0, 1.5]]);
        assert!(WaypointController::parse("").is_err());
        assert!(WaypointController::parse("1;2").is_err());
    }
}
