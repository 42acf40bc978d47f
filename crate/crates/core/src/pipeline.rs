//! End-to-end stages: collect → process → train → select → evaluate.
//!
//! Each `stage_*` function reads what earlier stages wrote into the run
//! directory plus the config, so stages can run in separate processes.
//! [`execute`] runs the same computation in memory for experiments.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{MazeSource, RunConfig, StartPolicy};
use crate::datastore::{BatchSampler, Episode, OfflineDataset};
use crate::encoder::{build_goal_set, Encoder, GoalSet};
use crate::fqe::{score_checkpoints, select_best};
use crate::mazesim::{MazeWorld, Pose};
use crate::metrics::{
    coverage_report, evaluate, select_goals, select_starts, EntropyReport, EvalGoal, EvalReport, PolicyController,
};
use crate::neural::{load_network, save_network, NetworkMeta, Role};
use crate::noisegen::{generate, NoiseConfig};
use crate::seeding::{derive_seed, rng_from};
use crate::trainer::{train, Checkpoint, Policy, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Collect,
    Process,
    Train,
    Select,
    Evaluate,
}

impl Stage {
    pub const PIPELINE: [Stage; 5] = [Stage::Collect, Stage::Process, Stage::Train, Stage::Select, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Collect => "collect",
            Stage::Process => "process",
            Stage::Train => "train",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Collect => 10,
            Stage::Process => 11,
            Stage::Train => 12,
            Stage::Select => 13,
            Stage::Evaluate => 14,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{} stage failed: {message}", stage.name())]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, StageError>;

trait Tag<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: std::fmt::Display> Tag<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| StageError { stage, message: e.to_string() })
    }
}

fn fail<T>(stage: Stage, message: impl Into<String>) -> Result<T> {
    Err(StageError { stage, message: message.into() })
}

pub fn build_world(cfg: &RunConfig) -> std::result::Result<MazeWorld, crate::mazesim::MazeError> {
    match cfg.maze_source() {
        MazeSource::Builtin(name) => MazeWorld::builtin(&name, cfg.world),
        MazeSource::File(path) => MazeWorld::load(&path, cfg.world),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectManifest {
    pub steps: usize,
    pub episodes: usize,
    pub simulated_s: f64,
    pub seed: u64,
}

/// Rolls one noise sequence of `collect.steps` actions through the world in
/// consecutive fixed-length episodes, embedding every visited pose.
pub fn collect(cfg: &RunConfig, world: &MazeWorld, encoder: &Encoder) -> Result<(OfflineDataset, CollectManifest)> {
    let st = Stage::Collect;
    let steps = cfg.collect.steps;
    if steps == 0 {
        return fail(st, "collection budget is zero; the dataset would be empty");
    }
    let ad = cfg.world.action_dims;
    let noise_seed = derive_seed(cfg.seed, "collect.noise");
    let noise = generate(&NoiseConfig {
        kind: cfg.noise.kind,
        length: steps.max(2),
        dims: ad,
        beta: cfg.noise.beta,
        sigma: cfg.noise.sigma,
        ou_theta: cfg.noise.ou_theta,
        ou_sigma: cfg.noise.ou_sigma,
        range: cfg.noise.range,
        seed: noise_seed,
    })
    .at(st)?;
    let mut start_rng = rng_from(derive_seed(cfg.seed, "collect.starts"));
    let mut dataset = OfflineDataset::new(cfg.encoder.dim, ad);
    let mut t = 0;
    while t < steps {
        let len = cfg.collect.episode_len.min(steps - t);
        let mut pose = match cfg.collect.start {
            StartPolicy::Fixed(x, y) => world.reset_to(Pose::new(x, y, 0.0)).at(st)?,
            StartPolicy::Random => world.reset(&mut start_rng).at(st)?,
        };
        let mut ep = Episode::default();
        for k in 0..len {
            let emb = encoder.embed(world, &pose).at(st)?;
            let action: Vec<f32> = noise.row(t + k).iter().map(|&a| a as f32).collect();
            ep.push(&emb.vector, &action, [pose.x as f32, pose.y as f32, pose.theta as f32], emb.ssd);
            pose = world.step(&pose, noise.row(t + k));
        }
        dataset.push_episode(ep).at(st)?;
        t += len;
    }
    let manifest = CollectManifest {
        steps,
        episodes: dataset.episodes().len(),
        simulated_s: steps as f64 * cfg.world.dt,
        seed: noise_seed,
    };
    Ok((dataset, manifest))
}

pub fn coverage(cfg: &RunConfig, world: &MazeWorld, dataset: &OfflineDataset) -> std::result::Result<EntropyReport, crate::metrics::MetricsError> {
    let r = cfg.noise.range;
    coverage_report(dataset, [(0.0, world.width_m()), (0.0, world.height_m())], &vec![(r.min, r.max); cfg.world.action_dims])
}

/// Evaluation goals and starts, derived from the master seed only so every
/// arm of an experiment faces the same tasks.
pub fn eval_tasks(cfg: &RunConfig, world: &MazeWorld, encoder: &Encoder) -> Result<(Vec<EvalGoal>, Vec<Vec<Pose>>)> {
    let st = Stage::Evaluate;
    let goals = select_goals(world, encoder, cfg.eval.goals, cfg.ssd_threshold, &mut rng_from(derive_seed(cfg.seed, "eval.goals")))
        .at(st)?;
    let starts = select_starts(
        world,
        encoder,
        &goals,
        cfg.eval.trials,
        cfg.eval.min_start_time,
        &cfg.eval.settings,
        &mut rng_from(derive_seed(cfg.seed, "eval.starts")),
    )
    .at(st)?;
    Ok((goals, starts))
}

pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    world: &MazeWorld,
    encoder: &Encoder,
    tasks: &(Vec<EvalGoal>, Vec<Vec<Pose>>),
    cfg: &RunConfig,
) -> Result<EvalReport> {
    evaluate(&mut PolicyController(policy), world, encoder, &tasks.0, &tasks.1, &cfg.eval.settings).at(Stage::Evaluate)
}

/// Everything an in-memory run produces.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dataset: OfflineDataset,
    pub goals: GoalSet,
    pub entropy: EntropyReport,
    pub training: TrainOutcome,
    /// Checkpoints with FQE scores.
    pub checkpoints: Vec<Checkpoint>,
    pub selected_step: u64,
    pub report: EvalReport,
    pub timings: Vec<(Stage, f64)>,
}

/// Whole pipeline without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutputs> {
    let world = build_world(cfg).at(Stage::Config)?;
    let encoder = Encoder::new(cfg.encoder.clone()).at(Stage::Config)?;
    let mut timings = Vec::new();
    let clock = Instant::now();
    let (dataset, _) = collect(cfg, &world, &encoder)?;
    timings.push((Stage::Collect, clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    let goals = build_goal_set(&dataset, cfg.ssd_threshold).at(Stage::Process)?;
    let entropy = coverage(cfg, &world, &dataset).at(Stage::Process)?;
    timings.push((Stage::Process, clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    let sampler = BatchSampler::new(&dataset, &goals).at(Stage::Train)?;
    let training = train(&sampler, &cfg.relabel, &cfg.train, cfg.fingerprint()).at(Stage::Train)?;
    timings.push((Stage::Train, clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    let mut checkpoints = training.checkpoints.clone();
    score_checkpoints(&mut checkpoints, &sampler, &cfg.relabel, &cfg.fqe).at(Stage::Select)?;
    let best = select_best(&checkpoints).at(Stage::Select)?.clone();
    timings.push((Stage::Select, clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    let tasks = eval_tasks(cfg, &world, &encoder)?;
    let report = evaluate_policy(&best.actor, &world, &encoder, &tasks, cfg)?;
    timings.push((Stage::Evaluate, clock.elapsed().as_secs_f64()));
    drop(sampler);
    Ok(RunOutputs {
        selected_step: best.step,
        dataset,
        goals,
        entropy,
        training,
        checkpoints,
        report,
        timings,
    })
}

// ---------------------------------------------------------------------------
// File-based stages

pub const DATASET_FILE: &str = "dataset.bin";
pub const GOALS_FILE: &str = "goals.txt";
pub const CKPT_DIR: &str = "checkpoints";
pub const SELECTED_FILE: &str = "selected.txt";

fn fingerprint_comment(cfg: &RunConfig) -> String {
    format!("# fingerprint={}\n", cfg.fingerprint_hex())
}

fn write(stage: Stage, path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| StageError { stage, message: format!("{}: {e}", path.display()) })?;
    f.write_all(contents).map_err(|e| StageError { stage, message: format!("{}: {e}", path.display()) })
}

fn read_text(stage: Stage, path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StageError { stage, message: format!("{}: {e}", path.display()) })
}

/// `key=value` lines.
fn kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<(MazeWorld, Encoder)> {
    fs::create_dir_all(out).at(Stage::Config)?;
    let world = build_world(cfg).at(Stage::Config)?;
    let encoder = Encoder::new(cfg.encoder.clone()).at(Stage::Config)?;
    Ok((world, encoder))
}

fn load_dataset(cfg: &RunConfig, out: &Path, stage: Stage) -> Result<OfflineDataset> {
    OfflineDataset::load_expecting(&out.join(DATASET_FILE), cfg.encoder.dim, cfg.world.action_dims).at(stage)
}

pub fn stage_collect(cfg: &RunConfig, out: &Path) -> Result<CollectManifest> {
    let (world, encoder) = prepare(cfg, out)?;
    let clock = Instant::now();
    let (dataset, manifest) = collect(cfg, &world, &encoder)?;
    dataset.save(&out.join(DATASET_FILE)).at(Stage::Collect)?;
    write(Stage::Collect, &out.join("config.txt"), cfg.to_text().as_bytes())?;
    let text = fingerprint_comment(cfg)
        + &kv(&[
            ("steps", manifest.steps.to_string()),
            ("episodes", manifest.episodes.to_string()),
            ("simulated_s", format!("{}", manifest.simulated_s)),
            ("noise_kind", cfg.noise.kind.to_string()),
            ("noise_seed", manifest.seed.to_string()),
            ("dataset_sha256", dataset.checksum()),
        ]);
    write(Stage::Collect, &out.join("collect_manifest.txt"), text.as_bytes())?;
    write(Stage::Collect, &out.join("collect_time.txt"), format!("wall_s={:.3}\n", clock.elapsed().as_secs_f64()).as_bytes())?;
    Ok(manifest)
}

pub fn save_goal_set(goals: &GoalSet) -> String {
    let mut s = format!("threshold={}\n", goals.threshold);
    for (e, t) in &goals.indices {
        let _ = writeln!(s, "{e},{t}");
    }
    s
}

pub fn parse_goal_set(text: &str) -> Option<GoalSet> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let threshold = lines.next()?.strip_prefix("threshold=")?.parse().ok()?;
    let mut indices = Vec::new();
    for line in lines {
        let (e, t) = line.split_once(',')?;
        indices.push((e.parse().ok()?, t.parse().ok()?));
    }
    Some(GoalSet { indices, threshold })
}

pub fn stage_process(cfg: &RunConfig, out: &Path) -> Result<(GoalSet, EntropyReport)> {
    let (world, _) = prepare(cfg, out)?;
    let st = Stage::Process;
    let dataset = load_dataset(cfg, out, st)?;
    let goals = build_goal_set(&dataset, cfg.ssd_threshold).at(st)?;
    write(st, &out.join(GOALS_FILE), (fingerprint_comment(cfg) + &save_goal_set(&goals)).as_bytes())?;
    let entropy = coverage(cfg, &world, &dataset).at(st)?;
    let csv = format!("{}{}\n{}\n", fingerprint_comment(cfg), EntropyReport::CSV_HEADER, entropy.csv_row());
    write(st, &out.join("entropy.csv"), csv.as_bytes())?;
    Ok((goals, entropy))
}

fn load_goals(out: &Path, stage: Stage) -> Result<GoalSet> {
    let text = read_text(stage, &out.join(GOALS_FILE))?;
    parse_goal_set(&text).ok_or_else(|| StageError { stage, message: "malformed goal set file".into() })
}

pub fn ckpt_path(out: &Path, step: u64) -> PathBuf {
    out.join(CKPT_DIR).join(format!("ckpt_{step}.bin"))
}

pub fn stage_train(cfg: &RunConfig, out: &Path) -> Result<Vec<u64>> {
    prepare(cfg, out)?;
    let st = Stage::Train;
    let dataset = load_dataset(cfg, out, st)?;
    let goals = load_goals(out, st)?;
    let sampler = BatchSampler::new(&dataset, &goals).at(st)?;
    let outcome = train(&sampler, &cfg.relabel, &cfg.train, cfg.fingerprint()).at(st)?;
    fs::create_dir_all(out.join(CKPT_DIR)).at(st)?;
    let mut manifest = fingerprint_comment(cfg);
    let _ = writeln!(manifest, "dataset_sha256={}", dataset.checksum());
    for ck in &outcome.checkpoints {
        let meta = NetworkMeta { role: Role::Actor, step: ck.step, fingerprint: ck.fingerprint, score: None };
        let path = ckpt_path(out, ck.step);
        save_network(&path, &ck.actor, &meta).at(st)?;
        let _ = writeln!(manifest, "ckpt_{}.bin={}", ck.step, sha256_hex(&fs::read(&path).at(st)?));
    }
    write(st, &out.join(CKPT_DIR).join("manifest.txt"), manifest.as_bytes())?;
    let mut log = fingerprint_comment(cfg) + "step,critic_loss,actor_loss\n";
    for s in &outcome.stats {
        let _ = writeln!(log, "{},{:.6},{:.6}", s.step, s.critic_loss, s.actor_loss);
    }
    write(st, &out.join("train_log.csv"), log.as_bytes())?;
    Ok(outcome.checkpoints.iter().map(|c| c.step).collect())
}

fn load_checkpoints(cfg: &RunConfig, out: &Path, stage: Stage) -> Result<Vec<Checkpoint>> {
    let manifest = read_text(stage, &out.join(CKPT_DIR).join("manifest.txt"))?;
    let mut cks = Vec::new();
    for (k, _) in parse_kv(&manifest) {
        let Some(step) = k.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".bin")) else { continue };
        let step: u64 = step.parse().at(stage)?;
        let (actor, meta) = load_network(&ckpt_path(out, step)).at(stage)?;
        if meta.fingerprint != cfg.fingerprint() {
            return fail(stage, format!("checkpoint {step} was produced by a different config"));
        }
        cks.push(Checkpoint { step, actor, fqe_score: meta.score, fingerprint: meta.fingerprint });
    }
    if cks.is_empty() {
        return fail(stage, "no checkpoints listed in manifest");
    }
    Ok(cks)
}

pub fn stage_select(cfg: &RunConfig, out: &Path) -> Result<u64> {
    prepare(cfg, out)?;
    let st = Stage::Select;
    let dataset = load_dataset(cfg, out, st)?;
    let goals = load_goals(out, st)?;
    let sampler = BatchSampler::new(&dataset, &goals).at(st)?;
    let mut cks = load_checkpoints(cfg, out, st)?;
    score_checkpoints(&mut cks, &sampler, &cfg.relabel, &cfg.fqe).at(st)?;
    let best = select_best(&cks).at(st)?;
    let mut csv = fingerprint_comment(cfg) + "step,fqe_score\n";
    for ck in &cks {
        let _ = writeln!(csv, "{},{:.6}", ck.step, ck.fqe_score.unwrap_or(f64::NAN));
    }
    write(st, &out.join("fqe.csv"), csv.as_bytes())?;
    write(st, &out.join(SELECTED_FILE), kv(&[("step", best.step.to_string())]).as_bytes())?;
    Ok(best.step)
}

pub fn stage_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let (world, encoder) = prepare(cfg, out)?;
    let st = Stage::Evaluate;
    let selected = parse_kv(&read_text(st, &out.join(SELECTED_FILE))?);
    let step: u64 = lookup(&selected, "step").ok_or_else(|| StageError { stage: st, message: "no selected step".into() })?.parse().at(st)?;
    let (actor, meta) = load_network(&ckpt_path(out, step)).at(st)?;
    if meta.fingerprint != cfg.fingerprint() {
        return fail(st, "selected checkpoint was produced by a different config");
    }
    let tasks = eval_tasks(cfg, &world, &encoder)?;
    let report = evaluate_policy(&actor, &world, &encoder, &tasks, cfg)?;
    let mut csv = fingerprint_comment(cfg).into_bytes();
    report.write_trials_csv(&mut csv).at(st)?;
    write(st, &out.join("eval.csv"), &csv)?;
    Ok(report)
}

/// Deterministic run summary (no wall-clock values).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub stages: Vec<Stage>,
    pub selected_step: u64,
    pub sr: f64,
    pub stl: f64,
    pub mean_time_s: f64,
    pub dataset_sha256: String,
    pub selected_ckpt_sha256: String,
    pub eval_sha256: String,
}

pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage, timings: &mut Vec<(Stage, f64)>| {
        timings.push((stage, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    stage_collect(cfg, out)?;
    lap(Stage::Collect, &mut timings);
    stage_process(cfg, out)?;
    lap(Stage::Process, &mut timings);
    stage_train(cfg, out)?;
    lap(Stage::Train, &mut timings);
    let step = stage_select(cfg, out)?;
    lap(Stage::Select, &mut timings);
    let report = stage_evaluate(cfg, out)?;
    lap(Stage::Evaluate, &mut timings);
    let st = Stage::Evaluate;
    let summary = Summary {
        stages: Stage::PIPELINE.to_vec(),
        selected_step: step,
        sr: report.sr,
        stl: report.stl,
        mean_time_s: report.mean_time_s,
        dataset_sha256: sha256_hex(&fs::read(out.join(DATASET_FILE)).at(st)?),
        selected_ckpt_sha256: sha256_hex(&fs::read(ckpt_path(out, step)).at(st)?),
        eval_sha256: sha256_hex(&fs::read(out.join("eval.csv")).at(st)?),
    };
    let stage_list = summary.stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(",");
    let text = fingerprint_comment(cfg)
        + &kv(&[
            ("stages", stage_list),
            ("selected_step", step.to_string()),
            ("sr", format!("{:.6}", summary.sr)),
            ("stl", format!("{:.6}", summary.stl)),
            ("mean_time_s", format!("{:.3}", summary.mean_time_s)),
            ("dataset_sha256", summary.dataset_sha256.clone()),
            ("selected_ckpt_sha256", summary.selected_ckpt_sha256.clone()),
            ("eval_sha256", summary.eval_sha256.clone()),
        ]);
    write(st, &out.join("summary.txt"), text.as_bytes())?;
    let mut t = String::from("stage,wall_s\n");
    for (s, secs) in &timings {
        let _ = writeln!(t, "{},{secs:.3}", s.name());
    }
    write(st, &out.join("timings.csv"), t.as_bytes())?;
    Ok(summary)
}
