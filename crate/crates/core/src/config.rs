//! Run configuration as flat `section.key = value` text.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown and repeated keys
//! are errors. Every key has a default, so an empty file is a valid config.
//! The fingerprint hashes the canonical listing of all resolved values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datastore::RelabelConfig;
use crate::encoder::EncoderConfig;
use crate::fqe::FqeConfig;
use crate::mazesim::WorldParams;
use crate::metrics::EvalSettings;
use crate::noisegen::{ActionRange, NoiseKind};
use crate::seeding::derive_seed;
use crate::trainer::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Where collection episodes begin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartPolicy {
    /// Every episode starts at this position (heading 0).
    Fixed(f64, f64),
    /// Uniform random free pose per episode.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSettings {
    pub kind: NoiseKind,
    pub beta: f64,
    pub sigma: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub range: ActionRange,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            kind: NoiseKind::PinkUniform,
            beta: 1.0,
            sigma: 0.5,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            range: ActionRange::UNIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSettings {
    pub steps: usize,
    pub episode_len: usize,
    pub start: StartPolicy,
}

impl Default for CollectSettings {
    fn default() -> Self {
        CollectSettings { steps: 7_200, episode_len: 60, start: StartPolicy::Fixed(1.5, 1.5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub goals: usize,
    pub trials: usize,
    pub settings: EvalSettings,
    /// Minimum optimal travel time from a start to its goal, seconds.
    pub min_start_time: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { goals: 8, trials: 5, settings: EvalSettings::default(), min_start_time: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Built-in layout name or path to an ASCII maze file.
    pub maze: String,
    pub world: WorldParams,
    pub encoder: EncoderConfig,
    pub ssd_threshold: f32,
    pub noise: NoiseSettings,
    pub collect: CollectSettings,
    pub relabel: RelabelConfig,
    pub train: TrainConfig,
    pub fqe: FqeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            maze: "standard".into(),
            world: WorldParams::default(),
            encoder: EncoderConfig::default(),
            ssd_threshold: 0.02,
            noise: NoiseSettings::default(),
            collect: CollectSettings::default(),
            relabel: RelabelConfig::default(),
            train: TrainConfig { gradient_steps: 20_000, ..TrainConfig::default() },
            fqe: FqeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Every key in canonical order.
pub const KEYS: &[&str] = &[
    "seed",
    "maze",
    "world.cell_size",
    "world.v_max",
    "world.omega_max",
    "world.dt",
    "world.action_dims",
    "encoder.dim",
    "encoder.rows",
    "encoder.cols",
    "encoder.fov_deg",
    "encoder.max_range",
    "encoder.crop_fraction",
    "encoder.texture_dims",
    "encoder.seed",
    "encoder.ssd_threshold",
    "noise.kind",
    "noise.beta",
    "noise.sigma",
    "noise.ou_theta",
    "noise.ou_sigma",
    "noise.min",
    "noise.max",
    "collect.steps",
    "collect.episode_len",
    "collect.start",
    "relabel.p",
    "relabel.w_geom",
    "relabel.delta_done",
    "relabel.reward_on_next",
    "relabel.strict_norm",
    "train.steps",
    "train.batch",
    "train.gamma",
    "train.lambda",
    "train.tau",
    "train.policy_delay",
    "train.smoothing_sigma",
    "train.smoothing_clip",
    "train.actor_lr",
    "train.critic_lr",
    "train.hidden",
    "train.checkpoint_every",
    "train.normalize_inputs",
    "fqe.iterations",
    "fqe.batch",
    "fqe.target_sync",
    "fqe.score_samples",
    "fqe.lr",
    "fqe.hidden",
    "fqe.normalize_inputs",
    "eval.goals",
    "eval.trials",
    "eval.max_steps",
    "eval.success_similarity",
    "eval.min_start_time",
];

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "maze" => self.maze = v.to_string(),
            "world.cell_size" => self.world.cell_size = parse(key, v)?,
            "world.v_max" => self.world.v_max = parse(key, v)?,
            "world.omega_max" => self.world.omega_max = parse(key, v)?,
            "world.dt" => self.world.dt = parse(key, v)?,
            "world.action_dims" => self.world.action_dims = parse(key, v)?,
            "encoder.dim" => self.encoder.dim = parse(key, v)?,
            "encoder.rows" => self.encoder.rows = parse(key, v)?,
            "encoder.cols" => self.encoder.cols = parse(key, v)?,
            "encoder.fov_deg" => self.encoder.fov_deg = parse(key, v)?,
            "encoder.max_range" => self.encoder.max_range = parse(key, v)?,
            "encoder.crop_fraction" => self.encoder.crop_fraction = parse(key, v)?,
            "encoder.texture_dims" => self.encoder.texture_dims = parse(key, v)?,
            "encoder.seed" => self.encoder.seed = parse(key, v)?,
            "encoder.ssd_threshold" => self.ssd_threshold = parse(key, v)?,
            "noise.kind" => self.noise.kind = parse(key, v)?,
            "noise.beta" => self.noise.beta = parse(key, v)?,
            "noise.sigma" => self.noise.sigma = parse(key, v)?,
            "noise.ou_theta" => self.noise.ou_theta = parse(key, v)?,
            "noise.ou_sigma" => self.noise.ou_sigma = parse(key, v)?,
            "noise.min" => self.noise.range.min = parse(key, v)?,
            "noise.max" => self.noise.range.max = parse(key, v)?,
            "collect.steps" => self.collect.steps = parse(key, v)?,
            "collect.episode_len" => self.collect.episode_len = parse(key, v)?,
            "collect.start" => {
                self.collect.start = if v == "random" {
                    StartPolicy::Random
                } else {
                    let parts: Vec<f64> = v
                        .split(',')
                        .map(|p| parse(key, p.trim()))
                        .collect::<Result<_>>()?;
                    match parts[..] {
                        [x, y] => StartPolicy::Fixed(x, y),
                        _ => return Err(ConfigError::BadValue { key: key.into(), value: v.into() }),
                    }
                }
            }
            "relabel.p" => self.relabel.p = parse(key, v)?,
            "relabel.w_geom" => self.relabel.w_geom = parse(key, v)?,
            "relabel.delta_done" => self.relabel.delta_done = parse(key, v)?,
            "relabel.reward_on_next" => self.relabel.reward_on_next = parse_bool(key, v)?,
            "relabel.strict_norm" => self.relabel.strict_norm = parse_bool(key, v)?,
            "train.steps" => self.train.gradient_steps = parse(key, v)?,
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.gamma" => self.train.gamma = parse(key, v)?,
            "train.lambda" => self.train.lambda = parse(key, v)?,
            "train.tau" => self.train.tau = parse(key, v)?,
            "train.policy_delay" => self.train.policy_delay = parse(key, v)?,
            "train.smoothing_sigma" => self.train.smoothing_sigma = parse(key, v)?,
            "train.smoothing_clip" => self.train.smoothing_clip = parse(key, v)?,
            "train.actor_lr" => self.train.actor_lr = parse(key, v)?,
            "train.critic_lr" => self.train.critic_lr = parse(key, v)?,
            "train.hidden" => self.train.hidden = parse_list(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "train.normalize_inputs" => self.train.normalize_inputs = parse_bool(key, v)?,
            "fqe.iterations" => self.fqe.iterations = parse(key, v)?,
            "fqe.batch" => self.fqe.batch = parse(key, v)?,
            "fqe.target_sync" => self.fqe.target_sync = parse(key, v)?,
            "fqe.score_samples" => self.fqe.score_samples = parse(key, v)?,
            "fqe.lr" => self.fqe.lr = parse(key, v)?,
            "fqe.hidden" => self.fqe.hidden = parse_list(key, v)?,
            "fqe.normalize_inputs" => self.fqe.normalize_inputs = parse_bool(key, v)?,
            "eval.goals" => self.eval.goals = parse(key, v)?,
            "eval.trials" => self.eval.trials = parse(key, v)?,
            "eval.max_steps" => self.eval.settings.max_steps = parse(key, v)?,
            "eval.success_similarity" => self.eval.settings.success_similarity = parse(key, v)?,
            "eval.min_start_time" => self.eval.min_start_time = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
        }
        Ok(())
    }

    /// Current value of one key as text.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "maze" => self.maze.clone(),
            "world.cell_size" => self.world.cell_size.to_string(),
            "world.v_max" => self.world.v_max.to_string(),
            "world.omega_max" => self.world.omega_max.to_string(),
            "world.dt" => self.world.dt.to_string(),
            "world.action_dims" => self.world.action_dims.to_string(),
            "encoder.dim" => self.encoder.dim.to_string(),
            "encoder.rows" => self.encoder.rows.to_string(),
            "encoder.cols" => self.encoder.cols.to_string(),
            "encoder.fov_deg" => self.encoder.fov_deg.to_string(),
            "encoder.max_range" => self.encoder.max_range.to_string(),
            "encoder.crop_fraction" => self.encoder.crop_fraction.to_string(),
            "encoder.texture_dims" => self.encoder.texture_dims.to_string(),
            "encoder.seed" => self.encoder.seed.to_string(),
            "encoder.ssd_threshold" => self.ssd_threshold.to_string(),
            "noise.kind" => self.noise.kind.to_string(),
            "noise.beta" => self.noise.beta.to_string(),
            "noise.sigma" => self.noise.sigma.to_string(),
            "noise.ou_theta" => self.noise.ou_theta.to_string(),
            "noise.ou_sigma" => self.noise.ou_sigma.to_string(),
            "noise.min" => self.noise.range.min.to_string(),
            "noise.max" => self.noise.range.max.to_string(),
            "collect.steps" => self.collect.steps.to_string(),
            "collect.episode_len" => self.collect.episode_len.to_string(),
            "collect.start" => match self.collect.start {
                StartPolicy::Random => "random".into(),
                StartPolicy::Fixed(x, y) => format!("{x},{y}"),
            },
            "relabel.p" => self.relabel.p.to_string(),
            "relabel.w_geom" => self.relabel.w_geom.to_string(),
            "relabel.delta_done" => self.relabel.delta_done.to_string(),
            "relabel.reward_on_next" => self.relabel.reward_on_next.to_string(),
            "relabel.strict_norm" => self.relabel.strict_norm.to_string(),
            "train.steps" => self.train.gradient_steps.to_string(),
            "train.batch" => self.train.batch.to_string(),
            "train.gamma" => self.train.gamma.to_string(),
            "train.lambda" => self.train.lambda.to_string(),
            "train.tau" => self.train.tau.to_string(),
            "train.policy_delay" => self.train.policy_delay.to_string(),
            "train.smoothing_sigma" => self.train.smoothing_sigma.to_string(),
            "train.smoothing_clip" => self.train.smoothing_clip.to_string(),
            "train.actor_lr" => self.train.actor_lr.to_string(),
            "train.critic_lr" => self.train.critic_lr.to_string(),
            "train.hidden" => join(&self.train.hidden),
            "train.checkpoint_every" => self.train.checkpoint_every.to_string(),
            "train.normalize_inputs" => self.train.normalize_inputs.to_string(),
            "fqe.iterations" => self.fqe.iterations.to_string(),
            "fqe.batch" => self.fqe.batch.to_string(),
            "fqe.target_sync" => self.fqe.target_sync.to_string(),
            "fqe.score_samples" => self.fqe.score_samples.to_string(),
            "fqe.lr" => self.fqe.lr.to_string(),
            "fqe.hidden" => join(&self.fqe.hidden),
            "fqe.normalize_inputs" => self.fqe.normalize_inputs.to_string(),
            "eval.goals" => self.eval.goals.to_string(),
            "eval.trials" => self.eval.trials.to_string(),
            "eval.max_steps" => self.eval.settings.max_steps.to_string(),
            "eval.success_similarity" => self.eval.settings.success_similarity.to_string(),
            "eval.min_start_time" => self.eval.min_start_time.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line: line_no, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line: line_no, key: key.into() });
            }
            cfg.set(key, value)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Propagates shared values and checks every section.
    pub fn finish(&mut self) -> Result<()> {
        self.relabel.gamma = self.train.gamma;
        self.fqe.gamma = self.train.gamma;
        self.train.seed = derive_seed(self.seed, "train");
        self.fqe.seed = derive_seed(self.seed, "fqe");
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.encoder.validate().map_err(|e| inv(&e))?;
        self.relabel.validate().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        self.fqe.validate().map_err(|e| inv(&e))?;
        self.noise.range.validate().map_err(|e| inv(&e))?;
        if self.collect.episode_len < 2 {
            return Err(ConfigError::Invalid("collect.episode_len must be at least 2".into()));
        }
        if self.eval.goals == 0 || self.eval.trials == 0 {
            return Err(ConfigError::Invalid("eval.goals and eval.trials must be positive".into()));
        }
        if !(self.ssd_threshold >= 0.0) {
            return Err(ConfigError::Invalid("encoder.ssd_threshold must be non-negative".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical listing.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint())
    }

    /// Resolves `maze` to a built-in layout or a file path.
    pub fn maze_source(&self) -> MazeSource {
        match self.maze.as_str() {
            "simple" | "standard" | "complex" => MazeSource::Builtin(self.maze.clone()),
            other => MazeSource::File(PathBuf::from(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MazeSource {
    Builtin(String),
    File(PathBuf),
}
