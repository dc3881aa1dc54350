//! The `seil` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::evolution::{
    generate_expert_demos, run_ablation, run_seil_outcome, EvolutionError, EvolutionReport, ExperimentConfig, RoundReport, Session, Study,
};
use crate::microsim::{EnvAugConfig, TaskSuite, Trajectory};
use crate::policy::{evaluate, ModelKind, Policy};
use crate::selftest::run_selftest;
use crate::storage::{
    read_checkpoint, read_demos, write_ablation, write_checkpoint, write_config_echo, write_demos, write_report, write_scored, StorageError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seil", version, about = "Self-evolving few-shot imitation learning on a 2-D pick-and-place bench")]
struct Cli {
    /// JSON experiment config; missing keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed, applied after the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rollouts and training; results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Read written demo files back and replay every demo
    #[arg(long, global = true)]
    verify: bool,
    /// Dotted config override, e.g. --set policy.lr=3e-4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the scripted expert demonstrations
    GenDemos,
    /// Train the round-0 policy on expert demos and evaluate it
    TrainBaseline,
    /// Run the full self-evolution loop
    Evolve,
    /// Evaluate a checkpoint
    Eval { checkpoint: PathBuf },
    /// Run one ablation study
    Ablate {
        #[arg(long)]
        study: Study,
    },
    /// Gradient, EMA, replay and codec checks
    Selftest,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Evolution(EvolutionError::Config(_)) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    // levels are fixed here; the environment is never consulted
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();

    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(CliError::Runtime(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    let cfg = cfg.with_overrides(&cli.overrides).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn save_demos(path: &Path, demos: &[Trajectory], verify: bool) -> Result<(), CliError> {
    write_demos(path, demos)?;
    if verify {
        let back = read_demos(path, true)?;
        if back.as_slice() != demos {
            return Err(CliError::Runtime(format!("{}: demos differ after reading back", path.display())));
        }
        log::info!("verified {} demos in {}", back.len(), path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    if let Command::Selftest = cli.command {
        return Ok(selftest());
    }
    // every setting is resolved before anything touches the disk
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenDemos => {
            create_out(out)?;
            write_config_echo(&out.join("config.json"), &cfg)?;
            let aug = EnvAugConfig {
                enabled: cfg.expert_aug,
                delta: cfg.delta,
            };
            let demos = generate_expert_demos(cfg.master_seed, cfg.shots, &aug)?;
            save_demos(&out.join("expert_demos.jsonl"), &demos, cli.verify)?;
            println!("wrote {} expert demos to {}", demos.len(), out.display());
        }
        Command::TrainBaseline => {
            create_out(out)?;
            write_config_echo(&out.join("config.json"), &cfg)?;
            let session = Session::prepare(&cfg)?;
            write_checkpoint(&out.join("policy_round0.ckpt"), &session.params)?;
            let (base, ema) = session.round0.clone();
            let report = EvolutionReport {
                config: cfg.clone(),
                rounds: vec![RoundReport {
                    round: 0,
                    base,
                    ema,
                    pool_size: session.expert.len(),
                    recorded: 0,
                    selected: 0,
                    converged: false,
                }],
                convergence_round: None,
                scored: Vec::new(),
            };
            write_report(&out.join("report.csv"), &report)?;
            println!("baseline: base SR {:.4}, ema SR {:.4}", session.round0.0.mean_sr(), session.round0.1.mean_sr());
        }
        Command::Evolve => {
            create_out(out)?;
            write_config_echo(&out.join("config.json"), &cfg)?;
            let session = Session::prepare(&cfg)?;
            write_checkpoint(&out.join("policy_round0.ckpt"), &session.params)?;
            let report_path = out.join("report.csv");
            let mut write_err = None;
            let outcome = run_seil_outcome(&cfg, &session, &mut |r| {
                if let Err(e) = write_report(&report_path, r) {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            let report = &outcome.report;
            write_report(&report_path, report)?;
            write_scored(&out.join("scored.csv"), report)?;
            write_checkpoint(&out.join("policy_final.ckpt"), &outcome.params)?;
            let pool: Vec<Trajectory> = outcome.pool.training_set().into_iter().cloned().collect();
            save_demos(&out.join("pool.jsonl"), &pool, cli.verify)?;
            let growth = report.growth_rate().map_or("n/a".into(), |g| format!("{g:.1}%"));
            println!(
                "rounds {}: base SR {:.4} -> {:.4} (growth {growth}), converged at {}",
                report.rounds.len() - 1,
                report.initial_base_sr(),
                report.final_base_sr(),
                report.convergence_round.map_or("-".into(), |r| r.to_string())
            );
        }
        Command::Eval { checkpoint } => {
            let params = read_checkpoint(checkpoint)?;
            let policy = Policy::new(cfg.policy.clone());
            let decls = policy.decls();
            let fits = decls.len() == params.tensors.len()
                && decls.iter().zip(params.names.iter().zip(&params.tensors)).all(|(d, (n, t))| &d.name == n && d.shape == t.shape);
            if !fits {
                return Err(StorageError::ShapeMismatch(format!("{} does not match the configured policy", checkpoint.display())).into());
            }
            let suite = TaskSuite::new(cfg.master_seed);
            let base = evaluate(&policy, &params, &suite, cfg.eval_episodes, cfg.delta, ModelKind::Base, 0);
            let mut lines = vec![format!("base,{}", base.mean_sr())];
            if let Some(shadow) = params.ema_view() {
                let ema = evaluate(&policy, &shadow, &suite, cfg.eval_episodes, cfg.delta, ModelKind::Ema, 0);
                lines.push(format!("ema,{}", ema.mean_sr()));
            }
            println!("model,sr");
            for l in &lines {
                println!("{l}");
            }
        }
        Command::Ablate { study } => {
            create_out(out)?;
            write_config_echo(&out.join("config.json"), &cfg)?;
            let table = run_ablation(*study, &cfg)?;
            let path = out.join(format!("ablation_{}.csv", study.as_str()));
            write_ablation(&path, &table)?;
            print!("{}", table.to_csv());
        }
        Command::Selftest => unreachable!(),
    }
    Ok(EXIT_OK)
}

fn selftest() -> i32 {
    let r = run_selftest();
    for c in &r.checks {
        println!("{:<18} {}  {}", c.name, if c.passed { "ok  " } else { "FAIL" }, c.detail);
    }
    println!("max gradient relative error: {:.3e}", r.max_grad_rel_error);
    if r.passed() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}
