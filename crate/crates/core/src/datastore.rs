//! Episodic offline dataset, its binary file format, frame stacking and
//! hindsight-relabeled batch sampling.
//!
//! Rewards are never stored: goals are chosen at sample time, so the reward
//! and terminal flag of a row are computed from the relabeled goal.
//!
//! File layout (little-endian):
//!
//! ```text
//! "MINV1" | version u32 | D u32 | P_a u32 | episodes u32
//! per episode: len u32, then len × (D + P_a + 4) f32  (embedding, action, x y theta, ssd)
//! CRC32 (IEEE) of everything above, u32
//! ```

use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::GoalSet;

pub const MAGIC: &[u8; 5] = b"MINV1";
pub const FORMAT_VERSION: u32 = 1;
pub const STACK: usize = 4;
const POSE_FIELDS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a dataset file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported dataset version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("dataset file truncated")]
    Truncated,
    #[error("dataset checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("dataset has {found_dim} embedding / {found_actions} action dims, run expects {dim} / {actions}")]
    DimensionMismatch { dim: usize, actions: usize, found_dim: usize, found_actions: usize },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("index out of range: step {t} of an episode with {len} steps")]
    OutOfRange { t: usize, len: usize },
    #[error("input vector is not unit norm (norm {0})")]
    NotUnitNorm(f32),
    #[error("goal set is empty")]
    EmptyGoalSet,
    #[error("no sampleable transitions (every episode has fewer than two steps)")]
    NoTransitions,
    #[error("invalid sampling request: {0}")]
    InvalidRequest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One episode in struct-of-arrays layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    /// `len × D` unit-norm embeddings.
    pub embeddings: Vec<f32>,
    /// `len × P_a` commanded actions; the action at `t` produced step `t + 1`.
    pub actions: Vec<f32>,
    /// Ground-truth `(x, y, theta)`; metrics only.
    pub poses: Vec<[f32; POSE_FIELDS]>,
    pub ssd: Vec<f32>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.ssd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ssd.is_empty()
    }

    pub fn push(&mut self, embedding: &[f32], action: &[f32], pose: [f32; POSE_FIELDS], ssd: f32) {
        self.embeddings.extend_from_slice(embedding);
        self.actions.extend_from_slice(action);
        self.poses.push(pose);
        self.ssd.push(ssd);
    }
}

/// Borrowed view of one stored step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub episode: usize,
    pub t: usize,
    pub embedding: &'a [f32],
    pub action: &'a [f32],
    pub pose: [f32; POSE_FIELDS],
    pub ssd: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    dim: usize,
    action_dims: usize,
    episodes: Vec<Episode>,
}

impl OfflineDataset {
    pub fn new(dim: usize, action_dims: usize) -> Self {
        OfflineDataset { dim, action_dims, episodes: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn action_dims(&self) -> usize {
        self.action_dims
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn push_episode(&mut self, ep: Episode) -> Result<()> {
        let n = ep.len();
        if ep.embeddings.len() != n * self.dim
            || ep.actions.len() != n * self.action_dims
            || ep.poses.len() != n
        {
            return Err(DataError::Malformed(format!(
                "episode arrays disagree on length {n} (D {}, P_a {})",
                self.dim, self.action_dims
            )));
        }
        self.episodes.push(ep);
        Ok(())
    }

    pub fn embedding(&self, episode: usize, t: usize) -> &[f32] {
        &self.episodes[episode].embeddings[t * self.dim..(t + 1) * self.dim]
    }

    pub fn action(&self, episode: usize, t: usize) -> &[f32] {
        &self.episodes[episode].actions[t * self.action_dims..(t + 1) * self.action_dims]
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        self.episodes.iter().enumerate().flat_map(move |(e, ep)| {
            (0..ep.len()).map(move |t| Transition {
                episode: e,
                t,
                embedding: self.embedding(e, t),
                action: self.action(e, t),
                pose: ep.poses[t],
                ssd: ep.ssd[t],
            })
        })
    }

    /// Four frames ending at `t`, padded by repeating frame 0.
    pub fn stack_state(&self, episode: usize, t: usize) -> Result<StackedState> {
        let ep = self.episodes.get(episode).ok_or(DataError::OutOfRange { t: episode, len: self.episodes.len() })?;
        if t >= ep.len() {
            return Err(DataError::OutOfRange { t, len: ep.len() });
        }
        let mut frames = vec![0.0; STACK * self.dim];
        self.write_stack(episode, t, &mut frames);
        Ok(StackedState { frames, dim: self.dim })
    }

    fn write_stack(&self, episode: usize, t: usize, out: &mut [f32]) {
        for k in 0..STACK {
            let src = (t + k).saturating_sub(STACK - 1);
            out[k * self.dim..(k + 1) * self.dim].copy_from_slice(self.embedding(episode, src));
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let record = self.dim + self.action_dims + POSE_FIELDS + 1;
        let mut buf = Vec::with_capacity(25 + self.total_steps() * record * 4 + self.episodes.len() * 4);
        buf.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.dim as u32, self.action_dims as u32, self.episodes.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (e, ep) in self.episodes.iter().enumerate() {
            buf.extend_from_slice(&(ep.len() as u32).to_le_bytes());
            for t in 0..ep.len() {
                let fields = self
                    .embedding(e, t)
                    .iter()
                    .chain(self.action(e, t))
                    .chain(&ep.poses[t])
                    .chain(std::iter::once(&ep.ssd[t]));
                for v in fields {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(DataError::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: MAGIC.len() };
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(DataError::Version { found: version });
        }
        let dim = cur.u32()? as usize;
        let action_dims = cur.u32()? as usize;
        let n_episodes = cur.u32()? as usize;
        let mut ds = OfflineDataset::new(dim, action_dims);
        for _ in 0..n_episodes {
            let len = cur.u32()? as usize;
            let mut ep = Episode::default();
            let mut emb = vec![0.0; dim];
            let mut act = vec![0.0; action_dims];
            for _ in 0..len {
                cur.f32s(&mut emb)?;
                cur.f32s(&mut act)?;
                let mut pose = [0.0; POSE_FIELDS];
                cur.f32s(&mut pose)?;
                let ssd = cur.f32()?;
                ep.push(&emb, &act, pose, ssd);
            }
            ds.episodes.push(ep);
        }
        let body_end = cur.pos;
        let stored = cur.u32()?;
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(DataError::Checksum { stored, computed });
        }
        if cur.pos != bytes.len() {
            return Err(DataError::Malformed(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Load and check the file matches the run's embedding and action dims.
    pub fn load_expecting(path: &Path, dim: usize, action_dims: usize) -> Result<Self> {
        let ds = Self::load(path)?;
        if ds.dim != dim || ds.action_dims != action_dims {
            return Err(DataError::DimensionMismatch {
                dim,
                actions: action_dims,
                found_dim: ds.dim,
                found_actions: ds.action_dims,
            });
        }
        Ok(ds)
    }

    /// Hex SHA-256 of the serialized dataset.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(DataError::Truncated)?;
        self.pos = end;
        Ok(chunk.try_into().expect("4-byte slice"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take4().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take4().map(f32::from_le_bytes)
    }

    fn f32s(&mut self, out: &mut [f32]) -> Result<()> {
        for v in out.iter_mut() {
            *v = self.f32()?;
        }
        Ok(())
    }
}

/// `[o'_{t-3}, o'_{t-2}, o'_{t-1}, o'_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    pub frames: Vec<f32>,
    pub dim: usize,
}

impl StackedState {
    /// Initial stack: four copies of the first observation.
    pub fn repeated(frame: &[f32]) -> Self {
        StackedState { frames: frame.repeat(STACK), dim: frame.len() }
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        &self.frames[k * self.dim..(k + 1) * self.dim]
    }

    /// Drop the oldest frame and append `frame`.
    pub fn push(&mut self, frame: &[f32]) {
        self.frames.copy_within(self.dim.., 0);
        let start = (STACK - 1) * self.dim;
        self.frames[start..].copy_from_slice(frame);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelabelConfig {
    /// Geometric parameter: `P(K = k) = p^(k-1) (1 - p)`.
    pub p: f64,
    /// Fraction of critic goals drawn geometrically from the future; the
    /// rest come uniformly from the goal set.
    pub w_geom: f64,
    pub delta_done: f32,
    pub gamma: f32,
    /// Compute the reward on `s_{t+1}` instead of `s_t`.
    pub reward_on_next: bool,
    /// Reject non-unit inputs to the similarity instead of renormalizing.
    pub strict_norm: bool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig {
            p: 0.95,
            w_geom: 0.5,
            delta_done: 0.8,
            gamma: 0.97,
            reward_on_next: false,
            strict_norm: false,
        }
    }
}

impl RelabelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidRequest(m));
        if !(0.0..1.0).contains(&self.p) {
            return bad(format!("p {} outside [0, 1)", self.p));
        }
        if !(0.0..=1.0).contains(&self.w_geom) {
            return bad(format!("w_geom {} outside [0, 1]", self.w_geom));
        }
        if !(self.delta_done > 0.0 && self.delta_done <= 1.0) {
            return bad(format!("delta_done {} outside (0, 1]", self.delta_done));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        Ok(())
    }
}

/// `min(t + k, last)` with `k ~ Geom(p)` on `k >= 1`.
pub fn sample_geometric_goal<R: rand::Rng + ?Sized>(t: usize, last: usize, p: f64, rng: &mut R) -> usize {
    let k = geometric_offset(p, rng);
    t.saturating_add(k).min(last)
}

fn geometric_offset<R: rand::Rng + ?Sized>(p: f64, rng: &mut R) -> usize {
    if p <= 0.0 {
        return 1;
    }
    // inverse CDF: P(K > k) = p^k
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let k = 1.0 + (u.ln() / p.ln()).floor();
    if k.is_finite() && k < usize::MAX as f64 {
        k as usize
    } else {
        usize::MAX
    }
}

/// Mean cosine similarity between the stacked frames and the goal. Inputs are
/// expected unit-norm; off-norm inputs are renormalized, or rejected when
/// `strict`.
pub fn similarity(state: &[f32], goal: &[f32], strict: bool) -> Result<f32> {
    let dim = goal.len();
    let check = |v: &[f32]| -> Result<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if (n - 1.0).abs() > 1e-4 {
            if strict || n == 0.0 {
                return Err(DataError::NotUnitNorm(n));
            }
            return Ok(n);
        }
        Ok(1.0)
    };
    let gn = check(goal)?;
    let mut total = 0.0;
    for frame in state.chunks_exact(dim) {
        let fnorm = check(frame)?;
        let dot: f32 = frame.iter().zip(goal).map(|(a, b)| a * b).sum();
        total += dot / (fnorm * gn);
    }
    Ok((total / (state.len() / dim) as f32).clamp(-1.0, 1.0))
}

/// `(r, d)`, both 1 iff `s >= delta_done`.
pub fn reward(s: f32, delta_done: f32) -> (f32, f32) {
    if s >= delta_done {
        (1.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Geometric/uniform goal mixture.
    Critic,
    /// Uniform goal-set goals only.
    Actor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalSource {
    /// Same-episode future frame at this step index.
    Geometric { episode: u32, step: u32 },
    /// Goal-set entry.
    Uniform { episode: u32, step: u32 },
}

/// Row-major batch. Dimensions are generic so the same container also
/// carries tabular test problems.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabeledBatch {
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub next_states: Vec<f32>,
    pub goals: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<f32>,
    pub sources: Vec<GoalSource>,
    /// `(episode, t)` of each row's transition.
    pub origins: Vec<(u32, u32)>,
}

impl RelabeledBatch {
    pub fn with_capacity(size: usize, state_dim: usize, action_dim: usize, goal_dim: usize) -> Self {
        RelabeledBatch {
            size: 0,
            state_dim,
            action_dim,
            goal_dim,
            states: Vec::with_capacity(size * state_dim),
            actions: Vec::with_capacity(size * action_dim),
            next_states: Vec::with_capacity(size * state_dim),
            goals: Vec::with_capacity(size * goal_dim),
            rewards: Vec::with_capacity(size),
            dones: Vec::with_capacity(size),
            sources: Vec::with_capacity(size),
            origins: Vec::with_capacity(size),
        }
    }
}

/// Uniform transition sampler with hindsight relabeling over one dataset and
/// goal set. Immutable; each caller brings its own rng.
#[derive(Debug)]
pub struct BatchSampler<'a> {
    dataset: &'a OfflineDataset,
    goals: &'a GoalSet,
    /// Steps with a successor in the same episode.
    transitions: Vec<(u32, u32)>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(dataset: &'a OfflineDataset, goals: &'a GoalSet) -> Result<Self> {
        if goals.is_empty() {
            return Err(DataError::EmptyGoalSet);
        }
        let transitions: Vec<(u32, u32)> = dataset
            .episodes()
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.len().saturating_sub(1)).map(move |t| (e as u32, t as u32)))
            .collect();
        if transitions.is_empty() {
            return Err(DataError::NoTransitions);
        }
        Ok(BatchSampler { dataset, goals, transitions })
    }

    pub fn dataset(&self) -> &OfflineDataset {
        self.dataset
    }

    pub fn goal_set(&self) -> &GoalSet {
        self.goals
    }

    pub fn state_dim(&self) -> usize {
        STACK * self.dataset.dim()
    }

    pub fn uniform_goal<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        self.goals.indices[rng.random_range(0..self.goals.len())]
    }

    pub fn sample_batch<R: rand::Rng + ?Sized>(
        &self,
        mode: SampleMode,
        batch: usize,
        cfg: &RelabelConfig,
        rng: &mut R,
    ) -> Result<RelabeledBatch> {
        if batch == 0 {
            return Err(DataError::InvalidRequest("batch size must be positive".into()));
        }
        let ds = self.dataset;
        let dim = ds.dim();
        let sd = self.state_dim();
        let mut out = RelabeledBatch::with_capacity(batch, sd, ds.action_dims(), dim);
        out.states.resize(batch * sd, 0.0);
        out.next_states.resize(batch * sd, 0.0);
        for i in 0..batch {
            let (e, t) = self.transitions[rng.random_range(0..self.transitions.len())];
            let (eu, tu) = (e as usize, t as usize);
            ds.write_stack(eu, tu, &mut out.states[i * sd..(i + 1) * sd]);
            ds.write_stack(eu, tu + 1, &mut out.next_states[i * sd..(i + 1) * sd]);
            out.actions.extend_from_slice(ds.action(eu, tu));
            let geometric = mode == SampleMode::Critic && rng.random::<f64>() < cfg.w_geom;
            let source = if geometric {
                let last = ds.episodes()[eu].len() - 1;
                let g = sample_geometric_goal(tu, last, cfg.p, rng);
                GoalSource::Geometric { episode: e, step: g as u32 }
            } else {
                let (ge, gt) = self.uniform_goal(rng);
                GoalSource::Uniform { episode: ge, step: gt }
            };
            let (GoalSource::Geometric { episode: ge, step: gt } | GoalSource::Uniform { episode: ge, step: gt }) =
                source;
            let goal = ds.embedding(ge as usize, gt as usize);
            out.goals.extend_from_slice(goal);
            let judged = if cfg.reward_on_next {
                &out.next_states[i * sd..(i + 1) * sd]
            } else {
                &out.states[i * sd..(i + 1) * sd]
            };
            let s = similarity(judged, goal, cfg.strict_norm)?;
            let (r, d) = reward(s, cfg.delta_done);
            out.rewards.push(r);
            out.dones.push(d);
            out.sources.push(source);
            out.origins.push((e, t));
        }
        out.size = batch;
        Ok(out)
    }

    /// `n` (stacked state, uniform goal) pairs with states drawn uniformly
    /// from every stored step. Returns `(states, goals)`, row-major.
    pub fn sample_state_goal_pairs<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f32>, Vec<f32>) {
        let ds = self.dataset;
        let sd = self.state_dim();
        let total = ds.total_steps();
        let mut states = vec![0.0; n * sd];
        let mut goals = Vec::with_capacity(n * ds.dim());
        for i in 0..n {
            let mut flat = rng.random_range(0..total);
            let mut e = 0;
            while flat >= ds.episodes()[e].len() {
                flat -= ds.episodes()[e].len();
                e += 1;
            }
            ds.write_stack(e, flat, &mut states[i * sd..(i + 1) * sd]);
            let (ge, gt) = self.uniform_goal(rng);
            goals.extend_from_slice(ds.embedding(ge as usize, gt as usize));
        }
        (states, goals)
    }
}
