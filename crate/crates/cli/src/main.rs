use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use offnav_core::config::RunConfig;
use offnav_core::experiments::{
    ablation_rows, coverage_comparison, run_arms, scaling_rows, ABLATION_HEADER, COVERAGE_HEADER, SCALING_HEADER,
};
use offnav_core::noisegen::NoiseKind;
use offnav_core::pipeline::{self, Stage, StageError};

#[derive(Parser)]
#[command(name = "offnav", version, about = "Offline goal-conditioned navigation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the exploration noise through the maze and store the dataset.
    Collect(Common),
    /// Build the goal set and coverage metrics from the stored dataset.
    Process(Common),
    /// Train the agent and write checkpoints.
    Train(Common),
    /// Score checkpoints with fitted Q evaluation and pick the best.
    Select(Common),
    /// Measure success of the selected checkpoint.
    Evaluate(Common),
    /// All stages in order.
    Pipeline(Common),
    /// Full pipeline once per noise kind and seed at equal budget.
    AblateNoise {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise kinds.
        #[arg(long, default_value = "white-uniform,ou,pink-gaussian,pink-uniform")]
        kinds: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Full pipeline per collection budget, seed mean and deviation.
    Scaling {
        #[command(flatten)]
        common: Common,
        /// Comma-separated budgets in steps; defaults to 1x, 2x and 3x the config budget.
        #[arg(long)]
        budgets: Option<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Coverage of freshly collected datasets per noise kind, without training.
    Entropy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "white-uniform,ou,pink-gaussian,pink-uniform")]
        kinds: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Stage(StageError),
    Other(anyhow::Error),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure::Stage(StageError { stage: Stage::Config, message: message.into() })
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| config_error(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.finish().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

fn parse_kinds(text: &str) -> Result<Vec<NoiseKind>, Failure> {
    text.split(',').map(|k| k.trim().parse().map_err(|e: offnav_core::noisegen::NoiseError| config_error(e.to_string()))).collect()
}

fn write_csv(out: &Path, name: &str, cfg: &RunConfig, header: &str, rows: &[String]) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(anyhow::Error::from)?;
    let mut text = format!("# fingerprint={}\n{header}\n", cfg.fingerprint_hex());
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(out.join(name), &text).map_err(anyhow::Error::from)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Collect(c) => {
            let cfg = load_config(&c)?;
            let m = pipeline::stage_collect(&cfg, &c.out)?;
            println!("collected {} steps in {} episodes ({} s simulated)", m.steps, m.episodes, m.simulated_s);
        }
        Command::Process(c) => {
            let cfg = load_config(&c)?;
            let (goals, entropy) = pipeline::stage_process(&cfg, &c.out)?;
            println!(
                "goal set {} frames; eta_s {:.4} eta_a {:.4} eta_sa {:.4}",
                goals.len(),
                entropy.eta_s(),
                entropy.eta_a(),
                entropy.eta_sa()
            );
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let steps = pipeline::stage_train(&cfg, &c.out)?;
            println!("wrote {} checkpoints", steps.len());
        }
        Command::Select(c) => {
            let cfg = load_config(&c)?;
            println!("selected step {}", pipeline::stage_select(&cfg, &c.out)?);
        }
        Command::Evaluate(c) => {
            let cfg = load_config(&c)?;
            let r = pipeline::stage_evaluate(&cfg, &c.out)?;
            println!("sr {:.4} stl {:.4} over {} trials", r.sr, r.stl, r.trials.len());
        }
        Command::Pipeline(c) => {
            let cfg = load_config(&c)?;
            let s = pipeline::run_pipeline(&cfg, &c.out)?;
            println!("selected step {} sr {:.4} stl {:.4}", s.selected_step, s.sr, s.stl);
        }
        Command::AblateNoise { common, kinds, seeds } => {
            let cfg = load_config(&common)?;
            let kinds = parse_kinds(&kinds)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let arms = run_arms(&cfg, &kinds, &[cfg.collect.steps], &seeds)?;
            let rows: Vec<String> = ablation_rows(&arms).iter().map(|r| r.csv_row()).collect();
            write_csv(&common.out, "ablation.csv", &cfg, ABLATION_HEADER, &rows)?;
        }
        Command::Scaling { common, budgets, seeds } => {
            let cfg = load_config(&common)?;
            let budgets: Vec<usize> = match budgets {
                Some(text) => text
                    .split(',')
                    .map(|b| b.trim().parse().map_err(|_| config_error(format!("bad budget `{b}`"))))
                    .collect::<Result<_, _>>()?,
                None => (1..=3).map(|k| k * cfg.collect.steps).collect(),
            };
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let arms = run_arms(&cfg, &[cfg.noise.kind], &budgets, &seeds)?;
            let rows: Vec<String> = scaling_rows(&arms).iter().map(|r| r.csv_row()).collect();
            write_csv(&common.out, "scaling.csv", &cfg, SCALING_HEADER, &rows)?;
        }
        Command::Entropy { common, kinds, seeds } => {
            let cfg = load_config(&common)?;
            let kinds = parse_kinds(&kinds)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let rows: Vec<String> = coverage_comparison(&cfg, &kinds, &seeds)?.iter().map(|r| r.csv_row()).collect();
            write_csv(&common.out, "coverage.csv", &cfg, COVERAGE_HEADER, &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
