//! Multi-run experiments: noise-kind ablation, budget scaling, coverage-only
//! comparison and checkpoint ranking. Each arm is a full in-memory pipeline
//! run with its own master seed.

use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::encoder::Encoder;
use crate::fqe::{spearman, FqeError};
use crate::metrics::EntropyReport;
use crate::noisegen::NoiseKind;
use crate::pipeline::{build_world, collect, coverage, eval_tasks, evaluate_policy, execute, Result, RunOutputs, Stage, StageError};
use crate::trainer::RandomPolicy;

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Copy of `base` with a new master seed, noise kind and budget, re-finished
/// so that every derived seed follows the master seed.
pub fn arm_config(base: &RunConfig, kind: NoiseKind, budget_steps: usize, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.noise.kind = kind;
    cfg.collect.steps = budget_steps;
    cfg.finish().map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub kind: NoiseKind,
    pub budget_steps: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: RunOutputs,
}

/// Runs the full pipeline for every (kind, budget, seed) combination, in
/// that nesting order.
pub fn run_arms(base: &RunConfig, kinds: &[NoiseKind], budgets: &[usize], seeds: &[u64]) -> Result<Vec<Arm>> {
    let mut arms = Vec::with_capacity(kinds.len() * budgets.len() * seeds.len());
    for &kind in kinds {
        for &budget_steps in budgets {
            for &seed in seeds {
                let config = arm_config(base, kind, budget_steps, seed)?;
                let outputs = execute(&config)?;
                arms.push(Arm { kind, budget_steps, seed, config, outputs });
            }
        }
    }
    Ok(arms)
}

/// Seed-mean row of the noise ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub kind: NoiseKind,
    pub eta_s: f64,
    pub eta_a: f64,
    pub eta_sa: f64,
    pub sr: f64,
    pub stl: f64,
    pub per_seed_sr: Vec<f64>,
}

pub const ABLATION_HEADER: &str = "noise_kind,eta_s,eta_a,eta_sa,sr,stl";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.kind, self.eta_s, self.eta_a, self.eta_sa, self.sr, self.stl
        )
    }
}

/// One row per noise kind, in first-seen order.
pub fn ablation_rows(arms: &[Arm]) -> Vec<AblationRow> {
    let mut kinds: Vec<NoiseKind> = Vec::new();
    for a in arms {
        if !kinds.contains(&a.kind) {
            kinds.push(a.kind);
        }
    }
    kinds
        .into_iter()
        .map(|kind| {
            let sel: Vec<&Arm> = arms.iter().filter(|a| a.kind == kind).collect();
            let avg = |f: &dyn Fn(&Arm) -> f64| mean_std(&sel.iter().map(|a| f(a)).collect::<Vec<_>>()).0;
            AblationRow {
                kind,
                eta_s: avg(&|a| a.outputs.entropy.eta_s()),
                eta_a: avg(&|a| a.outputs.entropy.eta_a()),
                eta_sa: avg(&|a| a.outputs.entropy.eta_sa()),
                sr: avg(&|a| a.outputs.report.sr),
                stl: avg(&|a| a.outputs.report.stl),
                per_seed_sr: sel.iter().map(|a| a.outputs.report.sr).collect(),
            }
        })
        .collect()
}

/// Seed statistics for one collection budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub budget_steps: usize,
    pub sr: f64,
    pub sr_std: f64,
    pub stl: f64,
    pub stl_std: f64,
}

pub const SCALING_HEADER: &str = "budget_steps,sr,sr_std,stl,stl_std";

impl ScalingRow {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{:.6}", self.budget_steps, self.sr, self.sr_std, self.stl, self.stl_std)
    }
}

/// One row per budget, in first-seen order.
pub fn scaling_rows(arms: &[Arm]) -> Vec<ScalingRow> {
    let mut budgets: Vec<usize> = Vec::new();
    for a in arms {
        if !budgets.contains(&a.budget_steps) {
            budgets.push(a.budget_steps);
        }
    }
    budgets
        .into_iter()
        .map(|budget_steps| {
            let sel: Vec<&Arm> = arms.iter().filter(|a| a.budget_steps == budget_steps).collect();
            let (sr, sr_std) = mean_std(&sel.iter().map(|a| a.outputs.report.sr).collect::<Vec<_>>());
            let (stl, stl_std) = mean_std(&sel.iter().map(|a| a.outputs.report.stl).collect::<Vec<_>>());
            ScalingRow { budget_steps, sr, sr_std, stl, stl_std }
        })
        .collect()
}

/// Collection plus coverage only, no training.
pub fn coverage_only(cfg: &RunConfig) -> Result<EntropyReport> {
    let world = build_world(cfg).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let encoder = Encoder::new(cfg.encoder.clone()).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let (dataset, _) = collect(cfg, &world, &encoder)?;
    coverage(cfg, &world, &dataset).map_err(|e| StageError { stage: Stage::Process, message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub kind: NoiseKind,
    pub eta_s: f64,
    pub eta_a: f64,
    pub eta_sa: f64,
}

pub const COVERAGE_HEADER: &str = "noise_kind,eta_s,eta_a,eta_sa";

impl CoverageRow {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.kind, self.eta_s, self.eta_a, self.eta_sa)
    }
}

/// Seed-mean coverage per noise kind at the base config's budget.
pub fn coverage_comparison(base: &RunConfig, kinds: &[NoiseKind], seeds: &[u64]) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            reports.push(coverage_only(&arm_config(base, kind, base.collect.steps, seed)?)?);
        }
        let avg = |f: fn(&EntropyReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>()).0;
        rows.push(CoverageRow {
            kind,
            eta_s: avg(EntropyReport::eta_s),
            eta_a: avg(EntropyReport::eta_a),
            eta_sa: avg(EntropyReport::eta_sa),
        });
    }
    Ok(rows)
}

/// FQE score against measured success rate for every checkpoint of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub steps: Vec<u64>,
    pub fqe: Vec<f64>,
    pub sr: Vec<f64>,
    /// `None` when either side has no rank variance.
    pub rho: Option<f64>,
}

impl Ranking {
    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut s = format!("# fingerprint={}\nstep,fqe_score,measured_sr\n", cfg.fingerprint_hex());
        for i in 0..self.steps.len() {
            let _ = writeln!(s, "{},{:.6},{:.6}", self.steps[i], self.fqe[i], self.sr[i]);
        }
        s
    }
}

/// Measures every scored checkpoint of `outputs` on the run's evaluation
/// tasks and correlates the results with the FQE scores.
pub fn rank_checkpoints(cfg: &RunConfig, outputs: &RunOutputs) -> Result<Ranking> {
    let st = Stage::Evaluate;
    let world = build_world(cfg).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let encoder = Encoder::new(cfg.encoder.clone()).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let tasks = eval_tasks(cfg, &world, &encoder)?;
    let mut ranking = Ranking { steps: Vec::new(), fqe: Vec::new(), sr: Vec::new(), rho: None };
    for ck in &outputs.checkpoints {
        let score = ck.fqe_score.ok_or_else(|| StageError { stage: st, message: format!("checkpoint {} has no score", ck.step) })?;
        ranking.steps.push(ck.step);
        ranking.fqe.push(score);
        ranking.sr.push(evaluate_policy(&ck.actor, &world, &encoder, &tasks, cfg)?.sr);
    }
    ranking.rho = match spearman(&ranking.fqe, &ranking.sr) {
        Ok(r) => Some(r),
        Err(FqeError::ZeroVariance) => None,
        Err(e) => return Err(StageError { stage: st, message: e.to_string() }),
    };
    Ok(ranking)
}

/// Success rate of a uniformly random policy on the config's evaluation tasks.
pub fn random_policy_sr(cfg: &RunConfig) -> Result<f64> {
    let world = build_world(cfg).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let encoder = Encoder::new(cfg.encoder.clone()).map_err(|e| StageError { stage: Stage::Config, message: e.to_string() })?;
    let tasks = eval_tasks(cfg, &world, &encoder)?;
    let policy = RandomPolicy::new(cfg.world.action_dims, crate::seeding::derive_seed(cfg.seed, "random.policy"));
    Ok(evaluate_policy(&policy, &world, &encoder, &tasks, cfg)?.sr)
}
