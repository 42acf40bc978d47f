//! Fitted Q evaluation for ranking checkpoints, plus rank correlation.
//!
//! A fresh Q network is regressed onto `R + γ(1−d)·Q′(s′, π(s′,g), g)`, where
//! the bootstrap action always comes from the evaluated policy. The target
//! function does not receive the stored actions at all; they only appear as
//! the regression input.

use thiserror::Error;

use crate::datastore::{BatchSampler, DataError, RelabelConfig, RelabeledBatch, SampleMode};
use crate::neural::{adam_step, AdamState, Head, Mlp, NeuralError};
use crate::seeding::{derive_seed, rng_from, Rng};
use crate::trainer::{concat_rows, regression_step, Checkpoint, FeatureScaler, Policy, TrainError};

#[derive(Debug, Error)]
pub enum FqeError {
    #[error("invalid fqe config: {0}")]
    InvalidConfig(String),
    #[error("fqe diverged: non-finite loss at iteration {0}")]
    Diverged(u64),
    #[error("score sample size must be positive")]
    EmptySample,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooFew,
    #[error("zero variance in ranks; correlation undefined")]
    ZeroVariance,
    #[error("no checkpoints to select from")]
    NoCheckpoints,
    #[error("checkpoint at step {0} has no score")]
    Unscored(u64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl From<TrainError> for FqeError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => FqeError::Data(d),
            TrainError::Neural(n) => FqeError::Neural(n),
            other => FqeError::InvalidConfig(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, FqeError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FqeConfig {
    pub iterations: u64,
    pub batch: usize,
    pub gamma: f32,
    /// Hard target copy period in iterations.
    pub target_sync: u64,
    pub score_samples: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Standardize embedding inputs with dataset statistics.
    pub normalize_inputs: bool,
    pub seed: u64,
}

impl Default for FqeConfig {
    fn default() -> Self {
        FqeConfig {
            iterations: 5_000,
            batch: 256,
            gamma: 0.97,
            target_sync: 100,
            score_samples: 2_048,
            lr: 3e-4,
            hidden: vec![256, 256],
            normalize_inputs: true,
            seed: 0,
        }
    }
}

impl FqeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 || self.target_sync == 0 || self.score_samples == 0 {
            return Err(FqeError::InvalidConfig("iterations, batch, target_sync and score_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.lr > 0.0) {
            return Err(FqeError::InvalidConfig("gamma must lie in [0, 1] and lr must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(FqeError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Bootstrap targets. Stored dataset actions are deliberately not a
/// parameter: the next action comes from `policy`.
#[allow(clippy::too_many_arguments)]
pub fn fqe_targets<P: Policy + ?Sized>(
    q_target: &Mlp<f32>,
    policy: &P,
    next_states: &[f32],
    goals: &[f32],
    rewards: &[f32],
    dones: &[f32],
    gamma: f32,
) -> Vec<f32> {
    let n = rewards.len();
    let sd = next_states.len() / n;
    let gd = goals.len() / n;
    let next_actions = policy.act(next_states, goals, n);
    let ad = policy.action_dim();
    let input = concat_rows(&[(next_states, sd), (&next_actions, ad), (goals, gd)], n);
    let q = q_target.predict(&input, n).expect("fqe input width");
    (0..n).map(|i| rewards[i] + gamma * (1.0 - dones[i]) * q[i]).collect()
}

/// Fits an evaluation Q network for `policy` on batches drawn by `next_batch`.
/// With a scaler, the network is trained on standardized state and goal
/// features and returned folded so that it takes raw inputs like the policy.
pub fn fqe_fit<P, F>(
    policy: &P,
    dims: (usize, usize, usize),
    scaler: Option<&FeatureScaler>,
    cfg: &FqeConfig,
    mut next_batch: F,
) -> Result<Mlp<f32>>
where
    P: Policy + ?Sized,
    F: FnMut(&mut Rng) -> std::result::Result<RelabeledBatch, DataError>,
{
    cfg.validate()?;
    let (sd, ad, gd) = dims;
    let mut layer_dims = vec![sd + ad + gd];
    layer_dims.extend(&cfg.hidden);
    layer_dims.push(1);
    let mut q = Mlp::new(&layer_dims, Head::Identity, &mut rng_from(derive_seed(cfg.seed, "fqe.init")));
    let mut q_target = q.clone();
    let mut opt = AdamState::for_net(&q, cfg.lr);
    let mut rng = rng_from(derive_seed(cfg.seed, "fqe.batches"));
    for it in 1..=cfg.iterations {
        let b = next_batch(&mut rng)?;
        let y = match scaler {
            None => fqe_targets(&q_target, policy, &b.next_states, &b.goals, &b.rewards, &b.dones, cfg.gamma),
            Some(sc) => {
                let raw_target = fold(&q_target, sc, sd, ad);
                fqe_targets(&raw_target, policy, &b.next_states, &b.goals, &b.rewards, &b.dones, cfg.gamma)
            }
        };
        let (mut states, mut goals) = (b.states.clone(), b.goals.clone());
        if let Some(sc) = scaler {
            sc.apply(&mut states);
            sc.apply(&mut goals);
        }
        let input = concat_rows(&[(&states, sd), (&b.actions, ad), (&goals, gd)], b.size);
        let (loss, grads) = regression_step(&q, &input, &y)?;
        if !loss.is_finite() {
            return Err(FqeError::Diverged(it));
        }
        adam_step(&mut q, &grads, &mut opt)?;
        if it % cfg.target_sync == 0 {
            q_target = q.clone();
        }
    }
    if !q.is_finite() {
        return Err(FqeError::Diverged(cfg.iterations));
    }
    Ok(match scaler {
        Some(sc) => fold(&q, sc, sd, ad),
        None => q,
    })
}

fn fold(q: &Mlp<f32>, scaler: &FeatureScaler, state_dim: usize, action_dim: usize) -> Mlp<f32> {
    let (shift, scale) = scaler.input_affine(state_dim / scaler.dim(), action_dim);
    q.fold_input_affine(&shift, &scale).expect("q input is state, action and goal")
}

/// FQE over dataset batches with uniform goal-set goals.
pub fn fqe_train<P: Policy + ?Sized>(
    policy: &P,
    sampler: &BatchSampler<'_>,
    relabel: &RelabelConfig,
    cfg: &FqeConfig,
) -> Result<Mlp<f32>> {
    let ds = sampler.dataset();
    let dims = (sampler.state_dim(), ds.action_dims(), ds.dim());
    let scaler = cfg.normalize_inputs.then(|| FeatureScaler::from_dataset(ds));
    fqe_fit(policy, dims, scaler.as_ref(), cfg, |rng| sampler.sample_batch(SampleMode::Actor, cfg.batch, relabel, rng))
}

/// Mean of `Q(s, π(s,g), g)` over given (state, goal) rows.
pub fn score_rows<P: Policy + ?Sized>(q: &Mlp<f32>, policy: &P, states: &[f32], goals: &[f32], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(FqeError::EmptySample);
    }
    let actions = policy.act(states, goals, n);
    let input = concat_rows(
        &[(states, states.len() / n), (&actions, policy.action_dim()), (goals, goals.len() / n)],
        n,
    );
    let values = q.predict(&input, n)?;
    Ok(values.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64)
}

/// Policy value estimate over `n` dataset states with uniform goal-set goals.
pub fn fqe_score<P: Policy + ?Sized>(
    q: &Mlp<f32>,
    policy: &P,
    sampler: &BatchSampler<'_>,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n == 0 {
        return Err(FqeError::EmptySample);
    }
    let (states, goals) = sampler.sample_state_goal_pairs(n, rng);
    score_rows(q, policy, &states, &goals, n)
}

/// Fits FQE for every checkpoint and stores the scores in place. Every
/// checkpoint is scored on the same sampled (state, goal) rows.
pub fn score_checkpoints(
    checkpoints: &mut [Checkpoint],
    sampler: &BatchSampler<'_>,
    relabel: &RelabelConfig,
    cfg: &FqeConfig,
) -> Result<()> {
    let mut rows_rng = rng_from(derive_seed(cfg.seed, "fqe.score_rows"));
    let (states, goals) = sampler.sample_state_goal_pairs(cfg.score_samples, &mut rows_rng);
    for ck in checkpoints.iter_mut() {
        let q = fqe_train(&ck.actor, sampler, relabel, cfg)?;
        ck.fqe_score = Some(score_rows(&q, &ck.actor, &states, &goals, cfg.score_samples)?);
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(FqeError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(FqeError::TooFew);
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FqeError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Highest-scoring checkpoint; ties go to the later training step.
pub fn select_best(checkpoints: &[Checkpoint]) -> Result<&Checkpoint> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for ck in checkpoints {
        let s = ck.fqe_score.ok_or(FqeError::Unscored(ck.step))?;
        match best {
            Some((b, bs)) if s < bs || (s == bs && ck.step < b.step) => {}
            _ => best = Some((ck, s)),
        }
    }
    best.map(|(c, _)| c).ok_or(FqeError::NoCheckpoints)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ck(step: u64, score: f64) -> Checkpoint {
        Checkpoint { step, actor: Mlp::zeros(&[1, 1], Head::Tanh), fqe_score: Some(score), fingerprint: 0 }
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(FqeError::TooFew)));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(FqeError::LengthMismatch(2, 1))));
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(FqeError::ZeroVariance)));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn select_best_cases() {
        let one = [ck(0, 0.3)];
        assert_eq!(select_best(&one).unwrap().step, 0);
        let three = [ck(0, 0.1), ck(1000, 0.9), ck(2000, 0.4)];
        assert_eq!(select_best(&three).unwrap().step, 1000);
        let tied = [ck(10_000, 0.7), ck(20_000, 0.7), ck(30_000, 0.2)];
        assert_eq!(select_best(&tied).unwrap().step, 20_000);
        assert!(matches!(select_best(&[]), Err(FqeError::NoCheckpoints)));
    }

    #[test]
    fn constant_q_scores_its_constant() {
        let q = Mlp::from_params(&[3, 1], Head::Identity, vec![0.0, 0.0, 0.0, 0.625]).unwrap();
        let actor = Mlp::<f32>::zeros(&[2, 1], Head::Tanh);
        let s = score_rows(&q, &actor, &[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0], 3).unwrap();
        assert!((s - 0.625).abs() < 1e-9);
        assert!(matches!(score_rows(&q, &actor, &[], &[], 0), Err(FqeError::EmptySample)));
    }

    #[test]
    fn targets_follow_policy_actions() {
        // Q'(s, a, g) = a, policy outputs tanh(0.5)
        let q = Mlp::from_params(&[3, 1], Head::Identity, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let actor = Mlp::from_params(&[2, 1], Head::Tanh, vec![0.0, 0.0, 0.5]).unwrap();
        let y = fqe_targets(&q, &actor, &[0.3, 0.9], &[1.0, 1.0], &[0.0, 1.0], &[0.0, 1.0], 0.5);
        assert!((y[0] - 0.5 * 0.5f32.tanh()).abs() < 1e-7);
        assert_eq!(y[1], 1.0);
    }
}
