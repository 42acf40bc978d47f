//! Goal-conditioned TD3+BC on relabeled offline batches.
//!
//! Twin critics regress to a clipped double-Q target with target-policy
//! smoothing and a terminal mask; the actor is updated every
//! `policy_delay` critic steps to maximize `Q1(s, π(s,g), g) − λ‖π(s,g) − a‖²`
//! with λ a fixed multiplier. Actions live in `[-1, 1]` per dimension.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::datastore::{BatchSampler, DataError, OfflineDataset, RelabelConfig, RelabeledBatch, SampleMode, STACK};
use crate::neural::{adam_step, polyak_update, AdamState, Head, Mlp, NeuralError};
use crate::seeding::{derive_seed, rng_from, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gradient_steps: u64,
    pub batch: usize,
    pub gamma: f32,
    /// Weight of the behavioral-cloning penalty.
    pub lambda: f32,
    pub tau: f64,
    pub policy_delay: u64,
    pub smoothing_sigma: f32,
    pub smoothing_clip: f32,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub checkpoint_every: u64,
    /// Standardize embedding inputs with dataset statistics.
    pub normalize_inputs: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gradient_steps: 50_000,
            batch: 256,
            gamma: 0.97,
            lambda: 0.001,
            tau: 0.005,
            policy_delay: 2,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: vec![256, 256],
            checkpoint_every: 1_000,
            normalize_inputs: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch == 0 || self.policy_delay == 0 || self.checkpoint_every == 0 {
            return bad("batch, policy_delay and checkpoint_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.smoothing_sigma >= 0.0 && self.smoothing_clip >= 0.0) {
            return bad("lambda and smoothing parameters must be non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Actor parameters at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub actor: Mlp<f32>,
    pub fqe_score: Option<f64>,
    pub fingerprint: u64,
}

/// Per-feature standardization of embedding inputs, shared by every stacked
/// frame and the goal. Rewards are computed on raw embeddings before this is
/// applied; only network inputs see scaled values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

impl FeatureScaler {
    /// Minimum standard deviation, so constant features are not amplified.
    pub const MIN_STD: f64 = 1e-3;

    pub fn identity(dim: usize) -> Self {
        FeatureScaler { mean: vec![0.0; dim], inv_std: vec![1.0; dim] }
    }

    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        let dim = ds.dim();
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let n = ds.total_steps().max(1) as f64;
        for tr in ds.transitions() {
            for (d, &v) in tr.embedding.iter().enumerate() {
                sum[d] += f64::from(v);
                sq[d] += f64::from(v) * f64::from(v);
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std = (0..dim)
            .map(|d| 1.0 / (sq[d] / n - mean[d] * mean[d]).max(0.0).sqrt().max(Self::MIN_STD))
            .map(|v| v as f32)
            .collect();
        FeatureScaler { mean: mean.iter().map(|&m| m as f32).collect(), inv_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Scales every `dim`-wide frame of a row-major buffer in place.
    pub fn apply(&self, values: &mut [f32]) {
        for frame in values.chunks_exact_mut(self.dim()) {
            for ((v, m), s) in frame.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
    }

    pub fn apply_batch(&self, batch: &mut RelabeledBatch) {
        self.apply(&mut batch.states);
        self.apply(&mut batch.next_states);
        self.apply(&mut batch.goals);
    }

    /// Shift and scale vectors for an input laid out as
    /// `[frames.., passthrough.., goal]`.
    pub fn input_affine(&self, frames: usize, passthrough: usize) -> (Vec<f64>, Vec<f64>) {
        let mut shift = Vec::new();
        let mut scale = Vec::new();
        let push_frame = |shift: &mut Vec<f64>, scale: &mut Vec<f64>| {
            shift.extend(self.mean.iter().map(|&m| f64::from(m)));
            scale.extend(self.inv_std.iter().map(|&s| f64::from(s)));
        };
        for _ in 0..frames {
            push_frame(&mut shift, &mut scale);
        }
        shift.extend(std::iter::repeat(0.0).take(passthrough));
        scale.extend(std::iter::repeat(1.0).take(passthrough));
        push_frame(&mut shift, &mut scale);
        (shift, scale)
    }

    /// Actor on raw `[stack, goal]` inputs.
    pub fn fold_actor(&self, actor: &Mlp<f32>) -> Mlp<f32> {
        let (shift, scale) = self.input_affine(STACK, 0);
        actor.fold_input_affine(&shift, &scale).expect("actor input is stack plus goal")
    }
}

/// Row-wise concatenation of blocks, each `n` rows of the given width.
pub fn concat_rows(blocks: &[(&[f32], usize)], n: usize) -> Vec<f32> {
    let width: usize = blocks.iter().map(|b| b.1).sum();
    let mut out = Vec::with_capacity(n * width);
    for i in 0..n {
        for (data, w) in blocks {
            out.extend_from_slice(&data[i * w..(i + 1) * w]);
        }
    }
    out
}

/// Deterministic goal-conditioned policy over batches of rows.
pub trait Policy {
    fn action_dim(&self) -> usize;
    /// Actions for `n` rows of (stacked state, goal).
    fn act(&self, states: &[f32], goals: &[f32], n: usize) -> Vec<f32>;
}

impl Policy for Mlp<f32> {
    fn action_dim(&self) -> usize {
        self.output_dim()
    }

    fn act(&self, states: &[f32], goals: &[f32], n: usize) -> Vec<f32> {
        let sd = states.len() / n;
        let gd = goals.len() / n;
        self.predict(&concat_rows(&[(states, sd), (goals, gd)], n), n)
            .expect("policy input width matches the actor")
    }
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp<f32>,
    pub actor_target: Mlp<f32>,
    pub critics: [Mlp<f32>; 2],
    pub critic_targets: [Mlp<f32>; 2],
    actor_opt: AdamState<f32>,
    critic_opts: [AdamState<f32>; 2],
}

impl Agent {
    /// Actor `(S+G) → hidden → A` with tanh head; critics `(S+A+G) → hidden → 1`.
    pub fn new(state_dim: usize, action_dim: usize, goal_dim: usize, cfg: &TrainConfig, rng: &mut Rng) -> Self {
        let mut actor_dims = vec![state_dim + goal_dim];
        actor_dims.extend(&cfg.hidden);
        actor_dims.push(action_dim);
        let mut critic_dims = vec![state_dim + action_dim + goal_dim];
        critic_dims.extend(&cfg.hidden);
        critic_dims.push(1);
        let actor = Mlp::new(&actor_dims, Head::Tanh, rng);
        let critics = [Mlp::new(&critic_dims, Head::Identity, rng), Mlp::new(&critic_dims, Head::Identity, rng)];
        Self::from_networks(actor, critics, cfg)
    }

    /// Wraps given online networks; targets start as copies.
    pub fn from_networks(actor: Mlp<f32>, critics: [Mlp<f32>; 2], cfg: &TrainConfig) -> Self {
        Agent {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor_opt: AdamState::for_net(&actor, cfg.actor_lr),
            critic_opts: [
                AdamState::for_net(&critics[0], cfg.critic_lr),
                AdamState::for_net(&critics[1], cfg.critic_lr),
            ],
            actor,
            critics,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critics.iter().all(|c| c.is_finite())
    }
}

/// Draws clipped Gaussian smoothing noise for `n` actions.
pub fn smoothing_noise(n: usize, action_dim: usize, sigma: f32, clip: f32, rng: &mut Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; n * action_dim];
    }
    let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
    (0..n * action_dim).map(|_| normal.sample(rng).clamp(-clip, clip)).collect()
}

/// `y = r + γ(1−d)·min_j Q′_j(s′, clip(π′(s′,g) + ε, −1, 1), g)`, with the
/// smoothing noise `ε` supplied by the caller.
pub fn critic_targets(batch: &RelabeledBatch, agent: &Agent, gamma: f32, noise: &[f32]) -> Vec<f32> {
    let n = batch.size;
    let ad = batch.action_dim;
    let mut next_actions = agent.actor_target.act(&batch.next_states, &batch.goals, n);
    for (a, e) in next_actions.iter_mut().zip(noise) {
        *a = (*a + *e).clamp(-1.0, 1.0);
    }
    let input = concat_rows(
        &[(&batch.next_states, batch.state_dim), (&next_actions, ad), (&batch.goals, batch.goal_dim)],
        n,
    );
    let q1 = agent.critic_targets[0].predict(&input, n).expect("critic width");
    let q2 = agent.critic_targets[1].predict(&input, n).expect("critic width");
    (0..n)
        .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * q1[i].min(q2[i]))
        .collect()
}

/// Mean squared error of `net` against `targets` and its parameter gradient.
pub fn regression_step(net: &Mlp<f32>, input: &[f32], targets: &[f32]) -> Result<(f32, Vec<f32>)> {
    let n = targets.len();
    let (q, cache) = net.forward(input, n)?;
    let mut loss = 0.0f32;
    let grad_out: Vec<f32> = q
        .iter()
        .zip(targets)
        .map(|(q, y)| {
            let e = q - y;
            loss += e * e;
            2.0 * e / n as f32
        })
        .collect();
    let (grads, _) = net.backward(&cache, &grad_out)?;
    Ok((loss / n as f32, grads))
}

/// One gradient step on both critics toward the shared target. Returns the
/// two losses.
pub fn critic_update(batch: &RelabeledBatch, agent: &mut Agent, cfg: &TrainConfig, rng: &mut Rng, step: u64) -> Result<[f32; 2]> {
    let noise = smoothing_noise(batch.size, batch.action_dim, cfg.smoothing_sigma, cfg.smoothing_clip, rng);
    let targets = critic_targets(batch, agent, cfg.gamma, &noise);
    let input = concat_rows(
        &[(&batch.states, batch.state_dim), (&batch.actions, batch.action_dim), (&batch.goals, batch.goal_dim)],
        batch.size,
    );
    let mut losses = [0.0; 2];
    for j in 0..2 {
        let (loss, grads) = regression_step(&agent.critics[j], &input, &targets)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { what: "critic loss", step });
        }
        adam_step(&mut agent.critics[j], &grads, &mut agent.critic_opts[j])?;
        losses[j] = loss;
    }
    Ok(losses)
}

/// Actor loss `−mean Q1(s, π(s,g), g) + λ·mean‖π(s,g) − a‖²` and its
/// gradient with respect to the actor parameters.
pub fn actor_loss_and_grad(batch: &RelabeledBatch, actor: &Mlp<f32>, critic: &Mlp<f32>, lambda: f32) -> Result<(f32, Vec<f32>)> {
    let n = batch.size;
    let (sd, ad, gd) = (batch.state_dim, batch.action_dim, batch.goal_dim);
    let (pred, actor_cache) = actor.forward(&concat_rows(&[(&batch.states, sd), (&batch.goals, gd)], n), n)?;
    let critic_in = concat_rows(&[(&batch.states, sd), (&pred, ad), (&batch.goals, gd)], n);
    let (q, critic_cache) = critic.forward(&critic_in, n)?;
    let inv_n = 1.0 / n as f32;
    let dq = critic.input_gradient(&critic_cache, &vec![-inv_n; n])?;
    let width = sd + ad + gd;
    let mut grad_pred = vec![0.0f32; n * ad];
    let mut loss = -q.iter().sum::<f32>() * inv_n;
    for i in 0..n {
        for k in 0..ad {
            let diff = pred[i * ad + k] - batch.actions[i * ad + k];
            loss += lambda * diff * diff * inv_n;
            grad_pred[i * ad + k] = dq[i * width + sd + k] + 2.0 * lambda * diff * inv_n;
        }
    }
    let (grads, _) = actor.backward(&actor_cache, &grad_pred)?;
    Ok((loss, grads))
}

/// One actor step through critic 1, followed by Polyak updates of all targets.
pub fn actor_update(batch: &RelabeledBatch, agent: &mut Agent, cfg: &TrainConfig, step: u64) -> Result<f32> {
    let (loss, grads) = actor_loss_and_grad(batch, &agent.actor, &agent.critics[0], cfg.lambda)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { what: "actor loss", step });
    }
    adam_step(&mut agent.actor, &grads, &mut agent.actor_opt)?;
    polyak_update(&mut agent.actor_target, &agent.actor, cfg.tau)?;
    for j in 0..2 {
        polyak_update(&mut agent.critic_targets[j], &agent.critics[j], cfg.tau)?;
    }
    Ok(loss)
}

/// Loss averages over one checkpoint interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Actors folded to take raw embeddings.
    pub checkpoints: Vec<Checkpoint>,
    pub stats: Vec<IntervalStats>,
    /// Final networks, operating on scaled inputs.
    pub agent: Agent,
    pub scaler: FeatureScaler,
}

/// Runs `gradient_steps` updates and snapshots the actor at steps
/// `0, c, 2c, …` (and at the final step).
pub fn train(
    sampler: &BatchSampler<'_>,
    relabel: &RelabelConfig,
    cfg: &TrainConfig,
    fingerprint: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    relabel.validate()?;
    let ds = sampler.dataset();
    let mut init_rng = rng_from(derive_seed(cfg.seed, "trainer.init"));
    let mut batch_rng = rng_from(derive_seed(cfg.seed, "trainer.batches"));
    let mut noise_rng = rng_from(derive_seed(cfg.seed, "trainer.smoothing"));
    let mut agent = Agent::new(sampler.state_dim(), ds.action_dims(), ds.dim(), cfg, &mut init_rng);
    let scaler = if cfg.normalize_inputs { FeatureScaler::from_dataset(ds) } else { FeatureScaler::identity(ds.dim()) };
    let snapshot = |agent: &Agent, step| Checkpoint {
        step,
        actor: scaler.fold_actor(&agent.actor),
        fqe_score: None,
        fingerprint,
    };
    let mut checkpoints = vec![snapshot(&agent, 0)];
    let mut stats = Vec::new();
    let (mut critic_sum, mut actor_sum, mut critic_n, mut actor_n) = (0.0f64, 0.0f64, 0u64, 0u64);
    for step in 1..=cfg.gradient_steps {
        let mut batch = sampler.sample_batch(SampleMode::Critic, cfg.batch, relabel, &mut batch_rng)?;
        scaler.apply_batch(&mut batch);
        let losses = critic_update(&batch, &mut agent, cfg, &mut noise_rng, step)?;
        critic_sum += f64::from(losses[0] + losses[1]) / 2.0;
        critic_n += 1;
        if step % cfg.policy_delay == 0 {
            let mut batch = sampler.sample_batch(SampleMode::Actor, cfg.batch, relabel, &mut batch_rng)?;
            scaler.apply_batch(&mut batch);
            actor_sum += f64::from(actor_update(&batch, &mut agent, cfg, step)?);
            actor_n += 1;
        }
        if step % cfg.checkpoint_every == 0 || step == cfg.gradient_steps {
            if !agent.is_finite() {
                return Err(TrainError::NonFinite { what: "parameters", step });
            }
            checkpoints.push(snapshot(&agent, step));
            stats.push(IntervalStats {
                step,
                critic_loss: critic_sum / critic_n.max(1) as f64,
                actor_loss: actor_sum / actor_n.max(1) as f64,
            });
            (critic_sum, actor_sum, critic_n, actor_n) = (0.0, 0.0, 0, 0);
        }
    }
    Ok(TrainOutcome { checkpoints, stats, agent, scaler })
}

/// Uniform random policy over `[-1, 1]^A`, seeded per call site.
#[derive(Debug)]
pub struct RandomPolicy {
    pub action_dim: usize,
    rng: std::cell::RefCell<Rng>,
}

impl RandomPolicy {
    pub fn new(action_dim: usize, seed: u64) -> Self {
        RandomPolicy { action_dim, rng: std::cell::RefCell::new(rng_from(seed)) }
    }
}

impl Policy for RandomPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn act(&self, _states: &[f32], _goals: &[f32], n: usize) -> Vec<f32> {
        let mut rng = self.rng.borrow_mut();
        (0..n * self.action_dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect()
    }
}
