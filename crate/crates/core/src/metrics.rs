//! Coverage entropy, goal-reaching evaluation and time-weighted success.

use std::io::{self, Write};

use thiserror::Error;

use crate::datastore::{similarity, DataError, OfflineDataset, StackedState};
use crate::encoder::{Encoder, EncoderError};
use crate::mazesim::{MazeWorld, Pose};
use crate::trainer::Policy;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample buffer length {len} is not a multiple of dimension {dims}")]
    Shape { len: usize, dims: usize },
    #[error("{0} ranges given for {1} dimensions")]
    Ranges(usize, usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("length mismatch")]
    LengthMismatch,
    #[error("reference time must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("goal at ({x:.3}, {y:.3}) has SSD {ssd} not above {threshold}")]
    InvalidGoal { x: f64, y: f64, ssd: f32, threshold: f32 },
    #[error("start ({x:.3}, {y:.3}) is invalid, at the goal, or cannot reach it")]
    BadStart { x: f64, y: f64 },
    #[error("could not find {wanted} {what}; found {found}")]
    NotEnough { what: &'static str, wanted: usize, found: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Binned entropy of a point cloud and the grid it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct Entropy {
    pub eta: f64,
    /// Total grid bins (product over dimensions).
    pub bins: f64,
    pub bins_per_dim: Vec<usize>,
    pub widths: Vec<f64>,
    pub n: usize,
}

/// Normalized plug-in entropy of `N×P` row-major samples on a grid with
/// per-dimension width `range_d · N^(−1/P)`. Samples outside a range are
/// clamped into the boundary bins; a zero-width range is one bin.
pub fn normalized_entropy(samples: &[f64], dims: usize, ranges: &[(f64, f64)]) -> Result<Entropy> {
    if dims == 0 || samples.len() % dims != 0 {
        return Err(MetricsError::Shape { len: samples.len(), dims });
    }
    if ranges.len() != dims {
        return Err(MetricsError::Ranges(ranges.len(), dims));
    }
    let n = samples.len() / dims;
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let shrink = (n as f64).powf(-1.0 / dims as f64);
    let mut widths = Vec::with_capacity(dims);
    let mut bins_per_dim = Vec::with_capacity(dims);
    for &(lo, hi) in ranges {
        let range = hi - lo;
        if range > 0.0 {
            let w = range * shrink;
            widths.push(w);
            bins_per_dim.push(((range / w) - 1e-9).ceil().max(1.0) as usize);
        } else {
            widths.push(0.0);
            bins_per_dim.push(1);
        }
    }
    let mut keys: Vec<u128> = samples
        .chunks_exact(dims)
        .map(|row| {
            let mut key = 0u128;
            for d in 0..dims {
                let b = bins_per_dim[d];
                let idx = if b == 1 {
                    0
                } else {
                    let f = ((row[d] - ranges[d].0) / widths[d]).floor();
                    if f.is_nan() {
                        0
                    } else {
                        (f.max(0.0) as usize).min(b - 1)
                    }
                };
                key = key * b as u128 + idx as u128;
            }
            key
        })
        .collect();
    keys.sort_unstable();
    let mut sum_c_log_c = 0.0;
    let mut i = 0;
    while i < keys.len() {
        let mut j = i + 1;
        while j < keys.len() && keys[j] == keys[i] {
            j += 1;
        }
        let c = (j - i) as f64;
        sum_c_log_c += c * c.log2();
        i = j;
    }
    let nf = n as f64;
    let h = nf.log2() - sum_c_log_c / nf;
    let log_k: f64 = bins_per_dim.iter().map(|&b| (b as f64).log2()).sum();
    let denom = log_k.min(nf.log2());
    let eta = if denom > 0.0 { (h / denom).clamp(0.0, 1.0) } else { 0.0 };
    let bins = bins_per_dim.iter().map(|&b| b as f64).product();
    Ok(Entropy { eta, bins, bins_per_dim, widths, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub state: Entropy,
    pub action: Entropy,
    pub joint: Entropy,
}

impl EntropyReport {
    pub fn eta_s(&self) -> f64 {
        self.state.eta
    }

    pub fn eta_a(&self) -> f64 {
        self.action.eta
    }

    pub fn eta_sa(&self) -> f64 {
        self.joint.eta
    }

    pub const CSV_HEADER: &'static str = "eta_s,eta_a,eta_sa,K_s,K_a,K_sa,N";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{},{},{}",
            self.eta_s(),
            self.eta_a(),
            self.eta_sa(),
            self.state.bins,
            self.action.bins,
            self.joint.bins,
            self.state.n
        )
    }
}

/// Entropy of the recorded planar positions, the actions and their
/// concatenation. `xy_bounds` are the world extents, `action_bounds` the
/// action range per dimension.
pub fn coverage_report(
    dataset: &OfflineDataset,
    xy_bounds: [(f64, f64); 2],
    action_bounds: &[(f64, f64)],
) -> Result<EntropyReport> {
    let ad = dataset.action_dims();
    if action_bounds.len() != ad {
        return Err(MetricsError::Ranges(action_bounds.len(), ad));
    }
    let n = dataset.total_steps();
    if n == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let mut xy = Vec::with_capacity(2 * n);
    let mut acts = Vec::with_capacity(ad * n);
    let mut joint = Vec::with_capacity((2 + ad) * n);
    for tr in dataset.transitions() {
        let p = [f64::from(tr.pose[0]), f64::from(tr.pose[1])];
        xy.extend_from_slice(&p);
        joint.extend_from_slice(&p);
        for &a in tr.action {
            acts.push(f64::from(a));
            joint.push(f64::from(a));
        }
    }
    let mut joint_bounds = xy_bounds.to_vec();
    joint_bounds.extend_from_slice(action_bounds);
    Ok(EntropyReport {
        state: normalized_entropy(&xy, 2, &xy_bounds)?,
        action: normalized_entropy(&acts, ad, action_bounds)?,
        joint: normalized_entropy(&joint, 2 + ad, &joint_bounds)?,
    })
}

/// Time-weighted success: mean of `S_i · T*_i / max(T_i, T*_i)`.
pub fn stl(successes: &[bool], times: &[f64], reference: &[f64]) -> Result<f64> {
    if successes.len() != times.len() || times.len() != reference.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if successes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..successes.len() {
        if !(reference[i] > 0.0) {
            return Err(MetricsError::NonPositiveReference(reference[i]));
        }
        if successes[i] {
            total += reference[i] / times[i].max(reference[i]);
        }
    }
    Ok(total / successes.len() as f64)
}

/// A goal pose with its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGoal {
    pub pose: Pose,
    pub embedding: Vec<f32>,
    pub ssd: f32,
}

impl EvalGoal {
    /// Embeds `pose`; rejects views whose SSD does not exceed `threshold`.
    pub fn new(world: &MazeWorld, encoder: &Encoder, pose: Pose, threshold: f32) -> Result<Self> {
        let emb = encoder.embed(world, &pose)?;
        if !(emb.ssd > threshold) || !world.is_valid_pose(&pose) {
            return Err(MetricsError::InvalidGoal { x: pose.x, y: pose.y, ssd: emb.ssd, threshold });
        }
        Ok(EvalGoal { pose, embedding: emb.vector, ssd: emb.ssd })
    }
}

/// What a controller sees each step. The pose is there for scripted
/// reference controllers; learned policies ignore it.
#[derive(Debug)]
pub struct Observation<'a> {
    pub state: &'a [f32],
    pub goal: &'a [f32],
    pub pose: &'a Pose,
    pub goal_pose: &'a Pose,
}

pub trait Controller {
    fn act(&mut self, obs: &Observation<'_>) -> Vec<f64>;
}

/// Adapts a batch policy to the per-step controller interface.
#[derive(Debug)]
pub struct PolicyController<'a, P: Policy + ?Sized>(pub &'a P);

impl<P: Policy + ?Sized> Controller for PolicyController<'_, P> {
    fn act(&mut self, obs: &Observation<'_>) -> Vec<f64> {
        self.0.act(obs.state, obs.goal, 1).into_iter().map(f64::from).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub goal: usize,
    pub start_index: usize,
    pub start: Pose,
    pub success: bool,
    pub steps: usize,
    pub time_s: f64,
    pub reference_s: f64,
    pub final_similarity: f32,
    pub final_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub trials: Vec<Trial>,
    pub per_goal_sr: Vec<f64>,
    pub sr: f64,
    /// Mean completion time over successful trials (0 if none).
    pub mean_time_s: f64,
    pub stl: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "goal,start,success,steps,time_s,final_sim,final_dist_m";

    pub fn write_trials_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for t in &self.trials {
            writeln!(
                w,
                "{},{},{},{},{:.3},{:.6},{:.6}",
                t.goal,
                t.start_index,
                u8::from(t.success),
                t.steps,
                t.time_s,
                t.final_similarity,
                t.final_distance_m
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub max_steps: usize,
    /// Success threshold on the stacked-frame similarity.
    pub success_similarity: f32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { max_steps: 80, success_similarity: 0.75 }
    }
}

/// Runs one episode per (goal, start) pair. `starts[g]` lists the start
/// poses for goal `g`.
pub fn evaluate(
    controller: &mut dyn Controller,
    world: &MazeWorld,
    encoder: &Encoder,
    goals: &[EvalGoal],
    starts: &[Vec<Pose>],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if starts.len() != goals.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let dt = world.params().dt;
    let mut trials = Vec::new();
    let mut per_goal_sr = Vec::with_capacity(goals.len());
    for (gi, goal) in goals.iter().enumerate() {
        let mut wins = 0usize;
        for (si, start) in starts[gi].iter().enumerate() {
            let reference_s = world
                .shortest_path_time(start, &goal.pose)
                .filter(|t| *t > 0.0)
                .ok_or(MetricsError::BadStart { x: start.x, y: start.y })?;
            let mut pose = world.reset_to(*start).map_err(|_| MetricsError::BadStart { x: start.x, y: start.y })?;
            let mut stack = StackedState::repeated(&encoder.embed(world, &pose)?.vector);
            let mut sim = similarity(&stack.frames, &goal.embedding, false)?;
            let mut steps = 0;
            let mut success = false;
            while steps < settings.max_steps {
                let action = controller.act(&Observation {
                    state: &stack.frames,
                    goal: &goal.embedding,
                    pose: &pose,
                    goal_pose: &goal.pose,
                });
                pose = world.step(&pose, &action);
                stack.push(&encoder.embed(world, &pose)?.vector);
                steps += 1;
                sim = similarity(&stack.frames, &goal.embedding, false)?;
                if sim >= settings.success_similarity {
                    success = true;
                    break;
                }
            }
            wins += usize::from(success);
            trials.push(Trial {
                goal: gi,
                start_index: si,
                start: *start,
                success,
                steps,
                time_s: steps as f64 * dt,
                reference_s,
                final_similarity: sim,
                final_distance_m: pose.distance(&goal.pose),
            });
        }
        per_goal_sr.push(if starts[gi].is_empty() { 0.0 } else { wins as f64 / starts[gi].len() as f64 });
    }
    let successes: Vec<bool> = trials.iter().map(|t| t.success).collect();
    let times: Vec<f64> = trials.iter().map(|t| t.time_s).collect();
    let refs: Vec<f64> = trials.iter().map(|t| t.reference_s).collect();
    let n_ok = successes.iter().filter(|&&s| s).count();
    let sr = if trials.is_empty() { 0.0 } else { n_ok as f64 / trials.len() as f64 };
    let mean_time_s = if n_ok == 0 {
        0.0
    } else {
        trials.iter().filter(|t| t.success).map(|t| t.time_s).sum::<f64>() / n_ok as f64
    };
    Ok(EvalReport { stl: stl(&successes, &times, &refs)?, trials, per_goal_sr, sr, mean_time_s })
}

/// Spatially spread goals: candidate free poses with SSD above `threshold`,
/// then greedy farthest-point selection.
pub fn select_goals<R: rand::Rng + ?Sized>(
    world: &MazeWorld,
    encoder: &Encoder,
    count: usize,
    threshold: f32,
    rng: &mut R,
) -> Result<Vec<EvalGoal>> {
    let mut candidates = Vec::new();
    for _ in 0..(40 * count).max(200) {
        let pose = world.reset(rng).map_err(|_| MetricsError::NotEnough { what: "free poses", wanted: 1, found: 0 })?;
        if let Ok(g) = EvalGoal::new(world, encoder, pose, threshold) {
            candidates.push(g);
        }
    }
    if candidates.len() < count {
        return Err(MetricsError::NotEnough { what: "valid goal poses", wanted: count, found: candidates.len() });
    }
    let mut chosen = vec![candidates.swap_remove(0)];
    while chosen.len() < count {
        let (best, _) = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, chosen.iter().map(|g| g.pose.distance(&c.pose)).fold(f64::INFINITY, f64::min)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        chosen.push(candidates.swap_remove(best));
    }
    Ok(chosen)
}

/// Random starts for each goal that are at least `min_time` seconds of
/// optimal travel away and do not already satisfy the success test.
pub fn select_starts<R: rand::Rng + ?Sized>(
    world: &MazeWorld,
    encoder: &Encoder,
    goals: &[EvalGoal],
    per_goal: usize,
    min_time: f64,
    settings: &EvalSettings,
    rng: &mut R,
) -> Result<Vec<Vec<Pose>>> {
    let mut all = Vec::with_capacity(goals.len());
    for goal in goals {
        let mut starts = Vec::with_capacity(per_goal);
        let mut attempts = 0;
        while starts.len() < per_goal {
            attempts += 1;
            if attempts > 1000 * per_goal.max(1) {
                return Err(MetricsError::NotEnough { what: "start poses", wanted: per_goal, found: starts.len() });
            }
            let pose = world.reset(rng).map_err(|_| MetricsError::NotEnough { what: "free poses", wanted: 1, found: 0 })?;
            let Some(t) = world.shortest_path_time(&pose, &goal.pose) else { continue };
            if t < min_time {
                continue;
            }
            let stack = StackedState::repeated(&encoder.embed(world, &pose)?.vector);
            if similarity(&stack.frames, &goal.embedding, false)? >= settings.success_similarity {
                continue;
            }
            starts.push(pose);
        }
        all.push(starts);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent histogram + Shannon formula.
    fn naive_eta(xs: &[f64], lo: f64, hi: f64) -> f64 {
        let n = xs.len();
        let w = (hi - lo) / n as f64;
        let k = ((hi - lo) / w - 1e-9).ceil() as usize;
        let mut counts = vec![0usize; k];
        for &x in xs {
            let mut b = ((x - lo) / w).floor() as usize;
            if b >= k {
                b = k - 1;
            }
            counts[b] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.log2()
            })
            .sum();
        h / (k as f64).log2().min((n as f64).log2())
    }

    #[test]
    fn identical_samples_have_zero_entropy() {
        let e = normalized_entropy(&[0.3; 40], 2, &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(e.eta, 0.0);
    }

    #[test]
    fn one_sample_per_bin_is_one() {
        let xs: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        let e = normalized_entropy(&xs, 1, &[(0.0, 1.0)]).unwrap();
        assert!((e.eta - 1.0).abs() < 1e-12);
        assert_eq!(e.bins_per_dim, vec![10]);
    }

    #[test]
    fn small_case_matches_naive_histogram() {
        let xs = [0.1, 0.1, 0.6, 0.9];
        let e = normalized_entropy(&xs, 1, &[(0.0, 1.0)]).unwrap();
        // bins [0,.25) [.25,.5) [.5,.75) [.75,1]: counts 2, 0, 1, 1 → H = 1.5
        assert!((e.eta - 0.75).abs() < 1e-15);
        assert!((e.eta - naive_eta(&xs, 0.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn upper_edge_goes_to_last_bin_and_zero_range_is_one_bin() {
        let e = normalized_entropy(&[0.0, 1.0, 1.0, 1.0], 1, &[(0.0, 1.0)]).unwrap();
        assert_eq!(e.bins_per_dim, vec![4]);
        let z = normalized_entropy(&[0.5, 0.0, 0.5, 1.0], 2, &[(0.5, 0.5), (0.0, 1.0)]).unwrap();
        assert_eq!(z.bins_per_dim[0], 1);
        assert!(matches!(normalized_entropy(&[1.0], 1, &[(0.0, 1.0)]), Err(MetricsError::TooFewSamples(1))));
    }

    #[test]
    fn stl_unit_cases() {
        assert_eq!(stl(&[true], &[4.0], &[4.0]).unwrap(), 1.0);
        assert_eq!(stl(&[true], &[8.0], &[4.0]).unwrap(), 0.5);
        assert_eq!(stl(&[false], &[1.0], &[4.0]).unwrap(), 0.0);
        assert_eq!(stl(&[true], &[2.0], &[4.0]).unwrap(), 1.0);
        assert!(stl(&[true], &[1.0], &[0.0]).is_err());
        assert!(stl(&[true, false], &[1.0], &[1.0]).is_err());
    }
}
