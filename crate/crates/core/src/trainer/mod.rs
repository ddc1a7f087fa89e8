//! The full training loop: random-walk pretraining, hierarchical rollouts
//! with the probabilistic exploration branch, both policy updates, periodic
//! representation retraining and evaluation.

mod agent;
mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use agent::{
    evaluate, low_input, read_meta, reference_waypoints, Controller, EvalReport, HierarchicalAgent, HierarchicalController,
    LatentBox, WaypointController,
};
pub use config::LespConfig;

use crate::envs::{MazeSpec, StateVec, ACTION_DIM, STATE_DIM};
use crate::error::Result;
use crate::exploration::{select_subgoal, write_event_rows, CountGrid, SelectionEvent, SelectionParams, EVENT_COLUMNS};
use crate::planner::{build_graph, fps, select_landmark};
use crate::policy::{ActMode, Batch, Regularization, SacAgent, SacConfig, UpdateReport};
use crate::reach::{collect_random_walk, train_reach, ReachConfig, ReachNet};
use crate::replay::{HighTransition, ReplayBuffer, Transition, WalkStep};
use crate::repr::{Embedder, LatentPoint, ReprNet, RetrainStatus, StateScaler};

pub const METRIC_COLUMNS: [&str; 8] =
    ["env_step", "episode", "eval_success_rate", "critic_loss", "actor_loss", "reg_loss", "triplet_loss", "coverage_cells"];

/// Independent random streams so that, for example, the high-level update
/// sequence does not depend on how the low level is regularized.
#[derive(Clone, Debug)]
pub struct Streams {
    pub pretrain: ChaCha8Rng,
    pub act: ChaCha8Rng,
    pub branch: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub low: ChaCha8Rng,
    pub high: ChaCha8Rng,
    pub repr: ChaCha8Rng,
    pub eval: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            pretrain: stream(0),
            act: stream(1),
            branch: stream(2),
            explore: stream(3),
            low: stream(4),
            high: stream(5),
            repr: stream(6),
            eval: stream(7),
            init: stream(8),
        }
    }
}

pub struct Pretrained {
    pub b_pre: ReplayBuffer<WalkStep>,
    pub phi: ReprNet,
    pub reach: ReachNet,
    pub reach_curve: Vec<f64>,
    pub repr_status: RetrainStatus,
}

/// Random-walk collection, an initial φ fitted on the walks, then the
/// reachability net trained against that φ.
pub fn pretrain<R: Rng + ?Sized>(cfg: &LespConfig, rng: &mut R) -> Result<Pretrained> {
    cfg.validate()?;
    let spec = cfg.maze()?;
    let mut b_pre = ReplayBuffer::new(cfg.pre_capacity);
    collect_random_walk(&spec, &mut b_pre, cfg.pretrain_episodes, cfg.walk_length, rng)?;
    let scaler = StateScaler::for_spec(&spec);
    let mut phi = ReprNet::new(scaler, cfg.latent_dim, cfg.repr_hidden, cfg.repr_margin, cfg.repr_lr, rng)?;
    let repr_status = phi.retrain(&b_pre, cfg.c, cfg.pretrain_repr_steps, cfg.repr_batch, rng)?;
    let reach_cfg = ReachConfig {
        horizon_clip: cfg.horizon_clip,
        steps: cfg.reach_steps,
        batch_size: cfg.reach_batch,
        learning_rate: cfg.reach_lr,
        hidden: cfg.reach_hidden,
    };
    let (reach, reach_curve) = train_reach(&b_pre, &phi, &reach_cfg, rng)?;
    Ok(Pretrained { b_pre, phi, reach, reach_curve, repr_status })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode: u64,
    pub eval_success_rate: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub reg_loss: f64,
    pub triplet_loss: f64,
    pub coverage_cells: usize,
}

impl MetricsRow {
    fn record(&self) -> [String; 8] {
        [
            self.env_step.to_string(),
            self.episode.to_string(),
            self.eval_success_rate.to_string(),
            self.critic_loss.to_string(),
            self.actor_loss.to_string(),
            self.reg_loss.to_string(),
            self.triplet_loss.to_string(),
            self.coverage_cells.to_string(),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub episode_returns: Vec<f64>,
    pub decisions: u64,
    pub explore_branches: u64,
    pub explore_events: u64,
    /// Exploration branches that found no candidate and used the policy.
    pub explore_fallbacks: u64,
    /// Exploration events planned without a landmark.
    pub landmark_misses: u64,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn final_success(&self) -> Option<f64> {
        self.rows.last().map(|r| r.eval_success_rate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub steps: usize,
    pub ext_return: f64,
    pub success: bool,
    pub decisions: usize,
    pub explore_decisions: usize,
    pub high_transitions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub low: UpdateReport,
    pub high: Option<UpdateReport>,
}

#[derive(Default)]
struct LossAccumulator {
    critic: f64,
    actor: f64,
    reg: f64,
    count: u64,
}

struct OutputSink {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    events: csv::Writer<File>,
    episodes: csv::Writer<File>,
}

pub struct Trainer {
    pub cfg: LespConfig,
    pub spec: MazeSpec,
    pub agent: HierarchicalAgent,
    pub reach: ReachNet,
    pub b_pre: ReplayBuffer<WalkStep>,
    pub low_buf: ReplayBuffer<Transition>,
    pub high_buf: ReplayBuffer<HighTransition>,
    pub grid: CountGrid,
    pub streams: Streams,
    pub env_steps: u64,
    pub episodes: u64,
    pub metrics: RunMetrics,
    /// Exploration events kept in memory when set.
    pub keep_events: bool,
    pub events: Vec<SelectionEvent>,
    last_triplet: f64,
    losses: LossAccumulator,
    sink: Option<OutputSink>,
    stopped: bool,
}

impl Trainer {
    pub fn new(cfg: LespConfig, pre: Pretrained, mut streams: Streams) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.maze()?;
        let sac = |obs: usize, act: usize| {
            let mut s = SacConfig::new(obs, act);
            s.hidden = cfg.hidden.clone();
            s.gamma = cfg.gamma;
            s.temperature = cfg.sac_temperature;
            s.actor_lr = cfg.actor_lr;
            s.critic_lr = cfg.critic_lr;
            s.tau_target = cfg.target_rho;
            s.snapshot_interval = cfg.snapshot_interval;
            s
        };
        let low = SacAgent::new(sac(STATE_DIM + cfg.latent_dim, ACTION_DIM), &mut streams.init)?;
        let high = SacAgent::new(sac(STATE_DIM, cfg.latent_dim), &mut streams.init)?;
        let last_triplet = match pre.repr_status {
            RetrainStatus::Trained { final_loss, .. } => final_loss,
            RetrainStatus::Skipped { .. } => f64::NAN,
        };
        let latent_box = LatentBox::from_points(&[], cfg.latent_dim);
        let mut t = Self {
            grid: CountGrid::new(cfg.cell_size),
            low_buf: ReplayBuffer::new(cfg.low_capacity),
            high_buf: ReplayBuffer::new(cfg.high_capacity),
            agent: HierarchicalAgent { low, high, phi: pre.phi, latent_box, c: cfg.c },
            reach: pre.reach,
            b_pre: pre.b_pre,
            spec,
            cfg,
            streams,
            env_steps: 0,
            episodes: 0,
            metrics: RunMetrics::default(),
            keep_events: false,
            events: Vec::new(),
            last_triplet,
            losses: LossAccumulator::default(),
            sink: None,
            stopped: false,
        };
        t.refresh_box();
        Ok(t)
    }

    /// Recomputes the latent bounds from every stored state.
    pub fn refresh_box(&mut self) {
        let mut states: Vec<StateVec> = self.b_pre.iter().map(|r| r.state).collect();
        states.extend(self.low_buf.iter().map(|r| r.state));
        let latents = self.agent.phi.embed_many(&states);
        self.agent.latent_box = LatentBox::from_points(&latents, self.cfg.latent_dim);
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped || self.env_steps >= self.cfg.total_env_steps
    }

    fn goal_state(&self) -> StateVec {
        StateVec::at(self.spec.goal[0], self.spec.goal[1])
    }

    /// Landmark planning followed by candidate scoring. `None` means the
    /// caller should use the high-level policy instead.
    pub fn explore(&mut self, s: &StateVec, z: &LatentPoint) -> Result<Option<SelectionEvent>> {
        let goal = self.goal_state();
        let phi = &self.agent.phi;
        let rng = &mut self.streams.explore;
        let mut pool = Vec::with_capacity(self.cfg.fps_pool);
        if let Some(first) = self.b_pre.get(0) {
            pool.push(first.state);
        }
        while pool.len() < self.cfg.fps_pool.min(self.b_pre.len()) {
            pool.push(self.b_pre.sample_one(rng)?.state);
        }
        let l_sel = if pool.is_empty() {
            None
        } else {
            let latents = phi.embed_many(&pool);
            let chosen = fps(&latents, self.cfg.n_cov, 0)?;
            let landmarks: Vec<StateVec> = chosen.iter().map(|&i| pool[i]).collect();
            let graph = build_graph(&landmarks, *s, goal, &self.reach, phi, self.cfg.tau);
            select_landmark(&graph, &self.reach, s).map(|sel| sel.latent)
        };
        if l_sel.is_none() {
            self.metrics.landmark_misses += 1;
        }
        let candidates = self.low_buf.states_within_latent_radius(z, self.cfg.r_g, phi, self.cfg.max_candidates, rng);
        let params = SelectionParams { alpha: self.cfg.alpha, r_g: self.cfg.r_g, gamma: self.cfg.gamma, c: self.cfg.c };
        let event_id = self.metrics.explore_events;
        let ev = select_subgoal(&self.low_buf, candidates, z.clone(), l_sel, &self.grid, phi, params, event_id, self.env_steps);
        if let Some(ev) = &ev {
            self.metrics.explore_events += 1;
            if let Some(sink) = &mut self.sink {
                write_event_rows(&mut sink.events, ev)?;
            }
            if self.keep_events {
                self.events.push(ev.clone());
            }
        }
        Ok(ev)
    }

    /// Subgoal for the next segment: exploration with probability `p`,
    /// otherwise the high-level policy.
    fn decide(&mut self, s: &StateVec, z: &LatentPoint) -> Result<(LatentPoint, bool)> {
        self.metrics.decisions += 1;
        let n: f64 = self.streams.branch.random();
        if n < self.cfg.p {
            self.metrics.explore_branches += 1;
            if let Some(ev) = self.explore(s, z)? {
                return Ok((ev.subgoal().clone(), true));
            }
            self.metrics.explore_fallbacks += 1;
        }
        Ok((self.agent.propose(s, ActMode::Stochastic, &mut self.streams.act)?, false))
    }

    /// One episode of interaction with learning interleaved per step.
    pub fn rollout_episode(&mut self) -> Result<EpisodeRecord> {
        let episode = self.episodes;
        let mut s = self.spec.reset(episode);
        let mut z = self.agent.phi.embed(&s);
        let mut rec = EpisodeRecord {
            episode,
            steps: 0,
            ext_return: 0.0,
            success: false,
            decisions: 0,
            explore_decisions: 0,
            high_transitions: 0,
        };
        let mut g = LatentPoint::zeros(self.cfg.latent_dim);
        let mut seg_start = s;
        let mut seg_step = 0usize;
        let mut seg_reward = 0.0;
        let mut seg_open = false;
        for t in 0..self.spec.horizon {
            if self.is_stopped() {
                break;
            }
            if t % self.cfg.c == 0 {
                if seg_open {
                    self.push_segment(&seg_start, &g, seg_reward, &s, false, episode, seg_step);
                    rec.high_transitions += 1;
                }
                let (goal, explored) = self.decide(&s, &z)?;
                g = goal;
                rec.decisions += 1;
                rec.explore_decisions += usize::from(explored);
                seg_start = s;
                seg_step = t;
                seg_reward = 0.0;
                seg_open = true;
            }
            self.grid.record_visit(&z);
            let a = self.agent.low_action(&s, &z, &g, ActMode::Stochastic, &mut self.streams.act)?;
            let (next, reward, success) = self.spec.transition(&s, a)?;
            let z_next = self.agent.phi.embed(&next);
            self.agent.latent_box.extend(&z_next);
            self.low_buf.push(Transition {
                state: s,
                subgoal: g.clone(),
                action: a,
                intrinsic_reward: -z_next.distance(&g),
                next_state: next,
                done: success,
                episode_id: episode,
                step_index: t,
            });
            seg_reward += reward;
            rec.ext_return += reward;
            rec.steps += 1;
            self.env_steps += 1;
            if let Some(report) = self.train_step()? {
                self.losses.critic += report.low.critic_loss;
                self.losses.actor += report.low.actor_loss;
                self.losses.reg += report.low.reg_loss;
                self.losses.count += 1;
            }
            s = next;
            z = z_next;
            if self.env_steps % self.cfg.eval_every == 0 {
                self.evaluate_and_log()?;
            }
            if success {
                rec.success = true;
                break;
            }
        }
        if seg_open {
            // a segment cut short by success or by the step budget ends the episode
            let partial = rec.steps - seg_step < self.cfg.c;
            self.push_segment(&seg_start, &g, seg_reward, &s, rec.success || partial, episode, seg_step);
            rec.high_transitions += 1;
        }
        self.episodes += 1;
        self.metrics.episode_returns.push(rec.ext_return);
        if let Some(sink) = &mut self.sink {
            sink.episodes.write_record([
                rec.episode.to_string(),
                self.env_steps.to_string(),
                rec.steps.to_string(),
                rec.ext_return.to_string(),
                u8::from(rec.success).to_string(),
                rec.decisions.to_string(),
                rec.explore_decisions.to_string(),
            ])?;
        }
        if self.episodes % self.cfg.repr_interval == 0 {
            self.retrain_repr()?;
        }
        Ok(rec)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_segment(&mut self, start: &StateVec, g: &LatentPoint, reward: f64, end: &StateVec, done: bool, episode: u64, step: usize) {
        self.high_buf.push(HighTransition {
            state: *start,
            chosen_subgoal: g.clone(),
            ext_reward_sum: reward,
            next_state: *end,
            done,
            episode_id: episode,
            step_index: step,
        });
    }

    pub fn retrain_repr(&mut self) -> Result<RetrainStatus> {
        let status = self.agent.phi.retrain(&self.low_buf, self.cfg.c, self.cfg.repr_steps, self.cfg.repr_batch, &mut self.streams.repr)?;
        if let RetrainStatus::Trained { final_loss, .. } = status {
            self.last_triplet = final_loss;
            self.refresh_box();
        }
        Ok(status)
    }

    /// Low-level batch with intrinsic rewards recomputed under the current φ.
    pub fn low_batch(&self, records: &[&Transition]) -> Batch {
        let scaler = self.agent.scaler();
        let states: Vec<StateVec> = records.iter().map(|r| r.state).collect();
        let nexts: Vec<StateVec> = records.iter().map(|r| r.next_state).collect();
        let z = self.agent.phi.embed_many(&states);
        let zn = self.agent.phi.embed_many(&nexts);
        let n = records.len();
        let width = STATE_DIM + self.cfg.latent_dim;
        let mut obs = Array2::zeros((n, width));
        let mut next_obs = Array2::zeros((n, width));
        let mut actions = Array2::zeros((n, ACTION_DIM));
        let mut rewards = Vec::with_capacity(n);
        for (b, r) in records.iter().enumerate() {
            for (k, v) in low_input(&scaler, &r.state, &z[b], &r.subgoal).into_iter().enumerate() {
                obs[[b, k]] = v;
            }
            for (k, v) in low_input(&scaler, &r.next_state, &zn[b], &r.subgoal).into_iter().enumerate() {
                next_obs[[b, k]] = v;
            }
            actions[[b, 0]] = r.action[0];
            actions[[b, 1]] = r.action[1];
            rewards.push(-zn[b].distance(&r.subgoal));
        }
        Batch { obs, actions, rewards, next_obs, dones: vec![false; n] }
    }

    pub fn high_batch(&self, records: &[&HighTransition]) -> Batch {
        let scaler = self.agent.scaler();
        let states: Vec<StateVec> = records.iter().map(|r| r.state).collect();
        let nexts: Vec<StateVec> = records.iter().map(|r| r.next_state).collect();
        let n = records.len();
        let mut actions = Array2::zeros((n, self.cfg.latent_dim));
        for (b, r) in records.iter().enumerate() {
            for (k, v) in self.agent.latent_box.to_action(&r.chosen_subgoal).into_iter().enumerate() {
                actions[[b, k]] = v;
            }
        }
        Batch {
            obs: scaler.feature_matrix(&states),
            actions,
            rewards: records.iter().map(|r| r.ext_reward_sum - self.cfg.high_step_penalty).collect(),
            next_obs: scaler.feature_matrix(&nexts),
            dones: records.iter().map(|r| r.done).collect(),
        }
    }

    /// One low-level update per call and one high-level update on every
    /// `c`-th environment step; nothing before the warmup.
    pub fn train_step(&mut self) -> Result<Option<TrainReport>> {
        if self.env_steps < self.cfg.warmup_steps || self.low_buf.is_empty() {
            return Ok(None);
        }
        let records = self.low_buf.sample_batch(self.cfg.batch_size, &mut self.streams.low)?;
        let batch = self.low_batch(&records);
        let reg = Regularization::StateSpecific { k_fraction: self.cfg.k_fraction };
        let low = self.agent.low.update(&batch, reg, &mut self.streams.low)?;
        let mut high = None;
        if self.env_steps % self.cfg.c as u64 == 0 && !self.high_buf.is_empty() {
            let records = self.high_buf.sample_batch(self.cfg.batch_size, &mut self.streams.high)?;
            let batch = self.high_batch(&records);
            high = Some(self.agent.high.update(&batch, Regularization::None, &mut self.streams.high)?);
        }
        Ok(Some(TrainReport { low, high }))
    }

    pub fn evaluate_now(&mut self) -> Result<EvalReport> {
        let mut ctl = HierarchicalController::new(&self.agent);
        evaluate(&self.spec, &mut ctl, self.cfg.eval_episodes, &mut self.streams.eval)
    }

    /// Evaluates, appends a metrics row and refreshes the checkpoint.
    pub fn evaluate_and_log(&mut self) -> Result<()> {
        let report = self.evaluate_now()?;
        let n = self.losses.count.max(1) as f64;
        let (critic, actor, reg) = if self.losses.count == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (self.losses.critic / n, self.losses.actor / n, self.losses.reg / n)
        };
        self.losses = LossAccumulator::default();
        let row = MetricsRow {
            env_step: self.env_steps,
            episode: self.episodes,
            eval_success_rate: report.success_rate,
            critic_loss: critic,
            actor_loss: actor,
            reg_loss: reg,
            triplet_loss: self.last_triplet,
            coverage_cells: self.grid.coverage(),
        };
        log::info!(
            "step {} episode {} success {:.2} critic {:.4} coverage {}",
            row.env_step,
            row.episode,
            row.eval_success_rate,
            row.critic_loss,
            row.coverage_cells
        );
        if let Some(sink) = &mut self.sink {
            sink.metrics.write_record(row.record())?;
            sink.metrics.flush()?;
            sink.events.flush()?;
            sink.episodes.flush()?;
            let dir = sink.dir.join("checkpoint");
            self.agent.save(&dir, Some(&self.reach))?;
            let mut meta = fs::OpenOptions::new().append(true).open(dir.join("meta.txt"))?;
            writeln!(meta, "env={}\nhorizon={}\nenv_step={}", self.cfg.env, self.cfg.horizon, self.env_steps)?;
        }
        self.metrics.rows.push(row);
        if self.cfg.target_success > 0.0 && report.success_rate >= self.cfg.target_success {
            self.stopped = true;
        }
        Ok(())
    }

    fn attach_output(&mut self, dir: &Path) -> Result<()> {
        let open = |name: &str, header: &[&str]| -> Result<csv::Writer<File>> {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record(header)?;
            Ok(w)
        };
        self.sink = Some(OutputSink {
            dir: dir.to_path_buf(),
            metrics: open("metrics.csv", &METRIC_COLUMNS)?,
            events: open("events.csv", &EVENT_COLUMNS)?,
            episodes: open("episodes.csv", &["episode", "env_step", "steps", "return", "success", "decisions", "explore_decisions"])?,
        });
        Ok(())
    }

    /// Runs episodes until the step budget or the target success rate is hit,
    /// with a closing evaluation when the last step was not on the schedule.
    pub fn train(&mut self) -> Result<()> {
        if self.metrics.rows.is_empty() {
            self.evaluate_and_log()?;
        }
        while !self.is_stopped() {
            self.rollout_episode()?;
        }
        if self.metrics.rows.last().map(|r| r.env_step) != Some(self.env_steps) {
            self.evaluate_and_log()?;
        }
        if let Some(sink) = &mut self.sink {
            sink.metrics.flush()?;
            sink.events.flush()?;
            sink.episodes.flush()?;
        }
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Manifest text: `meta.*` lines describing the launch, then the config.
pub fn manifest_text(cfg: &LespConfig, out_dir: &Path, seeds: &[u64]) -> String {
    let seeds = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "# lesp run manifest\nmeta.build=lesp {}\nmeta.started_unix={}\nmeta.output_dir={}\nmeta.seeds={}\n[config]\n{}",
        env!("CARGO_PKG_VERSION"),
        unix_now(),
        out_dir.display(),
        seeds,
        cfg.to_text()
    )
}

/// Pretrains, trains and, when `out_dir` is given, writes the manifest (before
/// training starts), pretraining artifacts, metrics, events and checkpoints.
pub fn run(cfg: &LespConfig, out_dir: Option<&Path>, seeds: &[u64]) -> Result<RunMetrics> {
    cfg.validate()?;
    let started = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), manifest_text(cfg, dir, seeds))?;
    }
    let mut streams = Streams::new(cfg.seed);
    let pre = pretrain(cfg, &mut streams.pretrain)?;
    if let Some(dir) = out_dir {
        write_pretrain_artifacts(dir, &pre)?;
    }
    let mut trainer = Trainer::new(cfg.clone(), pre, streams)?;
    if let Some(dir) = out_dir {
        trainer.attach_output(dir)?;
    }
    trainer.train()?;
    trainer.metrics.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        let mut f = fs::OpenOptions::new().append(true).open(dir.join(MANIFEST_FILE))?;
        writeln!(f, "meta.finished_unix={}", unix_now())?;
    }
    Ok(trainer.metrics)
}

fn write_pretrain_artifacts(dir: &Path, pre: &Pretrained) -> Result<()> {
    let pdir = dir.join("pretrain");
    fs::create_dir_all(&pdir)?;
    let mut w = csv::Writer::from_path(pdir.join("reach_loss.csv"))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in pre.reach_curve.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    let cells: std::collections::BTreeSet<(i64, i64)> =
        pre.b_pre.iter().map(|r| (r.state.pos[0].floor() as i64, r.state.pos[1].floor() as i64)).collect();
    let status = match &pre.repr_status {
        RetrainStatus::Trained { steps, final_loss } => format!("trained steps={steps} final_loss={final_loss}"),
        RetrainStatus::Skipped { reason } => format!("skipped: {reason}"),
    };
    fs::write(
        pdir.join("summary.txt"),
        format!(
            "records={}\nepisodes={}\nvisited_cells={}\nrepr={}\nreach_final_loss={}\n",
            pre.b_pre.len(),
            pre.b_pre.episodes().count(),
            cells.len(),
            status,
            pre.reach_curve.last().copied().unwrap_or(f64::NAN)
        ),
    )?;
    pre.phi.net.write_text(BufWriter::new(File::create(pdir.join("phi.txt"))?))?;
    pre.reach.net.write_text(BufWriter::new(File::create(pdir.join("reach.txt"))?))?;
    Ok(())
}
