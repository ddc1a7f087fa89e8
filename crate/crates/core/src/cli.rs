//! Command-line front end: `train`, `eval` and `export`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LespError, Result};
use crate::trainer::{
    evaluate, read_meta, run, EvalReport, HierarchicalAgent, HierarchicalController, LespConfig, WaypointController,
    MANIFEST_FILE,
};

#[derive(Parser, Debug)]
#[command(name = "lesp", version, about = "Landmark-guided exploration for hierarchical RL on point mazes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pretrain and train one or more seeds.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Merge metrics of several runs into a mean and confidence band.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Prospect weight set to zero.
    NoProspect,
    /// No state-specific regularization of the low-level critic.
    NoStableValue,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoProspect => "no-prospect",
            Ablation::NoStableValue => "no-stable-value",
        }
    }

    pub fn apply(self, cfg: &mut LespConfig) {
        match self {
            Ablation::NoProspect => cfg.alpha = 0.0,
            Ablation::NoStableValue => cfg.k_fraction = 0.0,
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Built-in maze name or path to a maze grid file.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds or an inclusive range like `1-5`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "r-g")]
    pub r_g: Option<f64>,
    #[arg(long = "n-cov")]
    pub n_cov: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "k-frac")]
    pub k_frac: Option<f64>,
    #[arg(long = "repr-interval")]
    pub repr_interval: Option<u64>,
    /// Evaluation episodes per evaluation.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<u64>,
    /// Stop a seed once an evaluation reaches this success rate.
    #[arg(long = "target-success")]
    pub target_success: Option<f64>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    /// Config file of `key=value` lines; run manifests are accepted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output root; each seed writes `<out>/<env>_seed<k>`.
    #[arg(long, env = "LESP_OUT_DIR", default_value = "runs")]
    pub out: PathBuf,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory holding `meta.txt`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    /// Overrides the environment recorded in the checkpoint.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result file; defaults to `eval.txt` inside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Run directories, each with `manifest.txt` and `metrics.csv`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "eval_success_rate")]
    pub metric: String,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || LespError::Config(format!("cannot parse seeds {text:?}"));
    if let Some((a, b)) = text.split_once('-') {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    pub fn config(&self) -> Result<LespConfig> {
        let file_text = match &self.config {
            Some(path) => Some(
                fs::read_to_string(path)
                    .map_err(|e| LespError::Config(format!("cannot read config {}: {e}", path.display())))?,
            ),
            None => None,
        };
        let mut cfg = match (&file_text, &self.env) {
            (Some(text), None) => LespConfig::from_text(text)?,
            (Some(text), Some(env)) => {
                let mut cfg = LespConfig::for_env(env)?;
                cfg.apply_text(text)?;
                cfg.env = env.clone();
                cfg
            }
            (None, env) => LespConfig::for_env(env.as_deref().unwrap_or("u_maze"))?,
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        macro_rules! flag {
            ($($field:ident => $key:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$key = v.clone();
                }
            )*};
        }
        flag!(steps => total_env_steps, c => c, p => p, alpha => alpha, r_g => r_g, n_cov => n_cov, tau => tau,
              k_frac => k_fraction, repr_interval => repr_interval, episodes => eval_episodes,
              eval_every => eval_every, target_success => target_success);
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| LespError::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(a) = self.ablation {
            a.apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self, cfg: &LespConfig) -> Result<Vec<u64>> {
        match &self.seeds {
            Some(text) => parse_seeds(text),
            None => Ok(vec![cfg.seed]),
        }
    }
}

/// `<env>[_<ablation>]_seed<k>`, with file-based envs reduced to their stem.
pub fn run_dir_name(cfg: &LespConfig, ablation: Option<Ablation>) -> String {
    let env = Path::new(&cfg.env).file_stem().and_then(|s| s.to_str()).unwrap_or("env");
    match ablation {
        Some(a) => format!("{env}_{}_seed{}", a.name(), cfg.seed),
        None => format!("{env}_seed{}", cfg.seed),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let base = args.config()?;
    let seeds = args.seeds(&base)?;
    let jobs = args.jobs.max(1).min(seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<PathBuf>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                let mut cfg = base.clone();
                cfg.seed = seed;
                let dir = args.out.join(run_dir_name(&cfg, args.ablation));
                let outcome = run(&cfg, Some(&dir), &seeds).map(|m| {
                    println!(
                        "{}: final success {:.3} after {} episodes in {:.1}s",
                        dir.display(),
                        m.final_success().unwrap_or(0.0),
                        m.episode_returns.len(),
                        m.wall_clock_secs
                    );
                    dir
                });
                results.lock().expect("result lock").push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let meta: BTreeMap<String, String> = read_meta(&args.checkpoint)?.into_iter().collect();
    let env = args
        .env
        .clone()
        .or_else(|| meta.get("env").cloned())
        .ok_or_else(|| LespError::Config("checkpoint records no env; pass --env".into()))?;
    let mut cfg = LespConfig::for_env(&env).or_else(|_| {
        let mut c = LespConfig::for_env("u_maze")?;
        c.env = env.clone();
        Ok::<_, LespError>(c)
    })?;
    if let Some(h) = meta.get("horizon") {
        cfg.set("horizon", h)?;
    }
    let spec = cfg.maze()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = match meta.get("controller").map(String::as_str) {
        Some("waypoints") => {
            let text = meta.get("waypoints").ok_or_else(|| LespError::Parse("waypoint checkpoint lacks waypoints".into()))?;
            evaluate(&spec, &mut WaypointController::parse(text)?, args.episodes, &mut rng)?
        }
        _ => {
            let agent = HierarchicalAgent::load(&args.checkpoint, &spec)?;
            evaluate(&spec, &mut HierarchicalController::new(&agent), args.episodes, &mut rng)?
        }
    };
    let line = format!(
        "env={env}\nepisodes={}\nsuccess_rate={}\nmean_steps={}\n",
        report.episodes, report.success_rate, report.mean_steps
    );
    print!("{line}");
    let out = args.out.clone().unwrap_or_else(|| args.checkpoint.join("eval.txt"));
    fs::write(out, line)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandRow {
    pub env_step: u64,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Mean, sample standard deviation and a 95% normal band over series keyed by
/// env step. A series that ended earlier carries its last value forward.
pub fn merge_series(series: &[Vec<(u64, f64)>]) -> Vec<BandRow> {
    let steps: std::collections::BTreeSet<u64> = series.iter().flatten().map(|(s, _)| *s).collect();
    let mut out = Vec::new();
    for step in steps {
        let vals: Vec<f64> = series
            .iter()
            .filter_map(|s| s.iter().take_while(|(t, _)| *t <= step).last().map(|(_, v)| *v))
            .collect();
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let half = 1.96 * std / (n as f64).sqrt();
        out.push(BandRow { env_step: step, runs: n, mean, std, lo: mean - half, hi: mean + half });
    }
    out
}

fn read_series(dir: &Path, metric: &str) -> Result<Vec<(u64, f64)>> {
    let mut rd = csv::Reader::from_path(dir.join("metrics.csv"))?;
    let headers = rd.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == metric)
        .ok_or_else(|| LespError::Config(format!("{} has no column {metric:?}", dir.display())))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let step = rec[0].parse().map_err(|_| LespError::Parse(format!("bad env_step in {}", dir.display())))?;
        let v = rec[col].parse().map_err(|_| LespError::Parse(format!("bad {metric} in {}", dir.display())))?;
        out.push((step, v));
    }
    Ok(out)
}

pub fn cmd_export(args: &ExportArgs) -> Result<Vec<BandRow>> {
    let mut reference: Option<(PathBuf, LespConfig)> = None;
    let mut series = Vec::new();
    for dir in &args.runs {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| LespError::Config(format!("cannot read manifest in {}: {e}", dir.display())))?;
        let mut cfg = LespConfig::from_text(&text)?;
        cfg.seed = 0;
        match &reference {
            None => reference = Some((dir.clone(), cfg)),
            Some((first, r)) if *r != cfg => {
                let diffs: Vec<String> = r
                    .to_pairs()
                    .into_iter()
                    .zip(cfg.to_pairs())
                    .filter(|(a, b)| a.1 != b.1)
                    .map(|(a, b)| format!("{}: {} vs {}", a.0, a.1, b.1))
                    .collect();
                return Err(LespError::Config(format!(
                    "runs {} and {} differ in more than the seed ({})",
                    first.display(),
                    dir.display(),
                    diffs.join("; ")
                )));
            }
            Some(_) => {}
        }
        series.push(read_series(dir, &args.metric)?);
    }
    let rows = merge_series(&series);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["env_step", "runs", "mean", "std", "band_lo", "band_hi"])?;
    for r in &rows {
        w.write_record([
            r.env_step.to_string(),
            r.runs.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.lo.to_string(),
            r.hi.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| LespError::Io(e.into_error()))?;
    match &args.out {
        Some(path) => fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(rows)
}

/// Runs a parsed command; the returned code is the process exit status.
pub fn execute(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Export(a) => cmd_export(a).map(|_| ()),
    };
    match outcome {
        Ok(()) => 0,
        Err(e @ LespError::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["lesp", "train"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("1-5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3,1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("5-1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "env=four_rooms\nalpha=0.5\np=0.4\n").unwrap();
        let a = train_args(&["--config", path.to_str().unwrap(), "--p", "0.2"]);
        let cfg = a.config().unwrap();
        assert_eq!((cfg.env.as_str(), cfg.alpha, cfg.p, cfg.n_cov), ("four_rooms", 0.5, 0.2, 60));
    }

    #[test]
    fn ablations_set_their_knob() {
        assert_eq!(train_args(&["--ablation", "no-prospect"]).config().unwrap().alpha, 0.0);
        assert_eq!(train_args(&["--ablation", "no-stable-value"]).config().unwrap().k_fraction, 0.0);
        assert!(Cli::try_parse_from(["lesp", "train", "--ablation", "potential"]).is_err());
    }

    #[test]
    fn every_flag_lands_in_the_config() {
        let a = train_args(&[
            "--env", "w_maze", "--seed", "4", "--steps", "77", "--c", "10", "--p", "0.3", "--alpha", "0.7", "--r-g", "5",
            "--n-cov", "9", "--tau", "12", "--k-frac", "0.25", "--repr-interval", "3", "--episodes", "7",
        ]);
        let cfg = a.config().unwrap();
        let back = LespConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            (cfg.seed, cfg.total_env_steps, cfg.c, cfg.p, cfg.alpha, cfg.r_g, cfg.n_cov, cfg.tau, cfg.k_fraction, cfg.repr_interval, cfg.eval_episodes),
            (4, 77, 10, 0.3, 0.7, 5.0, 9, 12.0, 0.25, 3, 7)
        );
    }

    #[test]
    fn bad_env_is_a_config_error() {
        let err = train_args(&["--env", "bogus"]).config().unwrap_err();
        assert!(matches!(err, LespError::Config(ref m) if m.contains("u_maze")));
    }

    #[test]
    fn merge_matches_hand_arithmetic() {
        let a = vec![(0, 0.0), (10, 1.0)];
        let b = vec![(0, 0.5), (10, 0.0), (20, 1.0)];
        let rows = merge_series(&[a, b]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].mean, 0.5);
        assert!((rows[1].std - 0.5f64.sqrt()).abs() < 1e-15);
        // the shorter series carries its last value into step 20
        assert_eq!((rows[2].runs, rows[2].mean), (2, 1.0));
        let one = merge_series(&[vec![(0, 0.3)]]);
        assert_eq!((one[0].lo, one[0].hi), (0.3, 0.3));
    }

    #[test]
    fn run_dir_names() {
        let mut cfg = LespConfig::for_env("u_maze").unwrap();
        cfg.seed = 3;
        assert_eq!(run_dir_name(&cfg, None), "u_maze_seed3");
        assert_eq!(run_dir_name(&cfg, Some(Ablation::NoProspect)), "u_maze_no-prospect_seed3");
    }
}
