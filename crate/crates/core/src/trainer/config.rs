use std::fmt::Write as _;
use std::path::Path;

use crate::envs::MazeSpec;
use crate::error::{LespError, Result};

/// A config value that round-trips through `key=value` text.
trait ConfigValue: Sized {
    fn parse_value(key: &str, text: &str) -> Result<Self>;
    fn render(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(key: &str, text: &str) -> Result<Self> {
                text.trim().parse().map_err(|_| LespError::Config(format!("{key}: cannot parse {text:?}")))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(u64, usize, f64);

impl ConfigValue for String {
    fn parse_value(_: &str, text: &str) -> Result<Self> {
        Ok(text.trim().to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(key: &str, text: &str) -> Result<Self> {
        text.split(',').map(|t| usize::parse_value(key, t)).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! lesp_config {
    ($($(#[doc = $doc:literal])* $field:ident: $t:ty,)*) => {
        /// Every knob of a run. `key=value` text with these field names is
        /// accepted by [`LespConfig::set`] and produced by [`LespConfig::to_text`].
        #[derive(Clone, Debug, PartialEq)]
        pub struct LespConfig {
            $($(#[doc = $doc])* pub $field: $t,)*
        }

        impl LespConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key.trim() {
                    $(stringify!($field) => self.$field = <$t>::parse_value(key, value)?,)*
                    other => return Err(LespError::Config(format!("unknown config key {other:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($field) => Some(self.$field.render()),)*
                    _ => None,
                }
            }

            pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.render())),*]
            }
        }
    };
}

lesp_config! {
    env: String,
    seed: u64,
    total_env_steps: u64,
    /// Low-level horizon: steps between high-level decisions.
    c: usize,
    /// Probability of the exploration branch at each decision.
    p: f64,
    /// Prospect weight.
    alpha: f64,
    /// Latent radius for candidate subgoals.
    r_g: f64,
    n_cov: usize,
    tau: f64,
    gamma: f64,
    k_fraction: f64,
    /// Episodes between representation retrains.
    repr_interval: u64,
    horizon: usize,
    batch_size: usize,
    warmup_steps: u64,
    eval_every: u64,
    eval_episodes: usize,
    /// Stop early once an evaluation reaches this success rate; 0 disables.
    target_success: f64,
    /// Cost subtracted from every high-level reward during learning; the
    /// stored segment sums are left untouched.
    high_step_penalty: f64,
    hidden: Vec<usize>,
    sac_temperature: f64,
    actor_lr: f64,
    critic_lr: f64,
    target_rho: f64,
    snapshot_interval: u64,
    latent_dim: usize,
    repr_hidden: usize,
    repr_margin: f64,
    repr_lr: f64,
    repr_steps: usize,
    repr_batch: usize,
    pretrain_repr_steps: usize,
    pretrain_episodes: usize,
    walk_length: usize,
    reach_hidden: usize,
    reach_steps: usize,
    reach_batch: usize,
    reach_lr: f64,
    horizon_clip: usize,
    cell_size: f64,
    max_candidates: usize,
    fps_pool: usize,
    low_capacity: usize,
    high_capacity: usize,
    pre_capacity: usize,
}

impl LespConfig {
    /// Defaults for a built-in environment. Only `n_cov` and the step budget
    /// differ between environments.
    pub fn for_env(env: &str) -> Result<Self> {
        let (n_cov, steps) = match env {
            "u_maze" => (20, 300_000),
            "four_rooms" => (60, 1_000_000),
            "w_maze" => (40, 1_000_000),
            _ => (20, 300_000),
        };
        let cfg = Self {
            env: env.to_string(),
            seed: 0,
            total_env_steps: steps,
            c: 20,
            p: 0.25,
            alpha: 0.1,
            r_g: 20.0,
            n_cov,
            tau: 30.0,
            gamma: 0.99,
            k_fraction: 0.5,
            repr_interval: 100,
            horizon: 500,
            batch_size: 128,
            warmup_steps: 5000,
            eval_every: 5000,
            eval_episodes: 50,
            target_success: 0.0,
            high_step_penalty: 1.0,
            hidden: vec![256, 256],
            sac_temperature: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            target_rho: 0.005,
            snapshot_interval: 500,
            latent_dim: 2,
            repr_hidden: 100,
            repr_margin: 2.0,
            repr_lr: 1e-4,
            repr_steps: 1000,
            repr_batch: 128,
            pretrain_repr_steps: 2000,
            pretrain_episodes: 200,
            walk_length: 250,
            reach_hidden: 256,
            reach_steps: 20_000,
            reach_batch: 128,
            reach_lr: 3e-4,
            horizon_clip: 50,
            cell_size: 2.0,
            max_candidates: 200,
            fps_pool: 2000,
            low_capacity: 200_000,
            high_capacity: 20_000,
            pre_capacity: 50_000,
        };
        cfg.maze()?;
        Ok(cfg)
    }

    /// The environment: a built-in name, or a path to a maze grid file.
    pub fn maze(&self) -> Result<MazeSpec> {
        let mut spec = if self.env.ends_with(".txt") || self.env.contains('/') {
            MazeSpec::from_file(Path::new(&self.env))?
        } else {
            MazeSpec::builtin(&self.env)?
        };
        spec.horizon = self.horizon;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LespError::Config(msg.to_string()));
        if self.c == 0 {
            return bad("c must be at least 1");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.k_fraction) {
            return bad("k_fraction must lie in [0, 1]");
        }
        if self.alpha < 0.0 || !(self.r_g > 0.0) || !(self.cell_size > 0.0) {
            return bad("alpha must be non-negative, r_g and cell_size positive");
        }
        if self.pretrain_episodes == 0 || self.walk_length == 0 {
            return bad("pretraining needs at least one random-walk episode");
        }
        let counts = [
            self.n_cov,
            self.horizon,
            self.batch_size,
            self.eval_episodes,
            self.latent_dim,
            self.repr_hidden,
            self.repr_batch,
            self.reach_hidden,
            self.reach_batch,
            self.horizon_clip,
            self.max_candidates,
            self.fps_pool,
            self.low_capacity,
            self.high_capacity,
            self.pre_capacity,
        ];
        if counts.contains(&0) || self.repr_interval == 0 || self.eval_every == 0 || self.snapshot_interval == 0 {
            return bad("counts and intervals must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        self.maze()?;
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines, `#` comments, `[section]`
    /// headers and keys under `meta.` are ignored, so run manifests load
    /// directly.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LespError::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            if key.trim().starts_with("meta.") {
                continue;
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Loads a config file on top of the defaults for the `env` it names
    /// (or `u_maze` when it names none).
    pub fn from_text(text: &str) -> Result<Self> {
        let env = text
            .lines()
            .filter_map(|l| l.trim().split_once('='))
            .find(|(k, _)| k.trim() == "env")
            .map(|(_, v)| v.trim().to_string())
            .unwrap_or_else(|| "u_maze".to_string());
        let mut cfg = Self::for_env(&env)?;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            writeln!(out, "{k}={v}").expect("writing to a string");
        }
        out
    }
}
