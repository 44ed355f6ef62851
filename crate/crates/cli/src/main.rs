use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kix::config::{ConfigError, GroundMetric, RunConfig};
use kix::env::WorldState;
use kix::eval::{build_report, rollout_eval, EpisodeLog, EvalError, EvalMode};
use kix::exec::Exec;
use kix::knowledge::{activate, InstanceGraph, MetaAction, MetaEvaluator, TypeGraph};
use kix::nets::PolicyRepository;
use kix::numeric::{Checkpoint, CheckpointError};
use kix::rng::{self, tag};
use kix::knowledge::SelectMode;
use kix::trainer::agent::{self, LowLevel, Meter};
use kix::trainer::{self, AgentParams, Progress, TrainError};

#[derive(Parser)]
#[command(name = "kix", version, about = "Knowledge-guided hierarchical RL in a multi-room gridworld")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set seed=3`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run rollouts on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides)?,
            None => RunConfig::from_toml_with("", &self.overrides)?,
        };
        Ok(cfg)
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a variant; writes the echoed config, logs and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory (defaults to `out_dir` from the config).
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint and write a per-episode log.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episode log to write.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Print every meta decision of the first N episodes instead.
        #[arg(long, value_name = "N")]
        trace: Option<usize>,
    },
    /// Build the comparison report from episode logs.
    Compare {
        /// Episode logs written by `eval`.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
        #[arg(short = 'k', long, default_value_t = 100)]
        top_k: usize,
        #[arg(long, default_value = "manhattan", value_parser = parse_metric)]
        metric: GroundMetric,
    },
    /// Print the knowledge graphs of a freshly generated world.
    InspectGraph {
        #[command(flatten)]
        common: Common,
        /// Score every candidate with this checkpoint's meta network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn parse_metric(s: &str) -> Result<GroundMetric, String> {
    match s {
        "manhattan" => Ok(GroundMetric::Manhattan),
        "index" => Ok(GroundMetric::Index),
        "uniform" => Ok(GroundMetric::Uniform),
        _ => Err(format!("unknown metric {s:?} (manhattan, index, uniform)")),
    }
}

fn load_repo(path: &Path, cfg: &RunConfig) -> Result<PolicyRepository> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(PolicyRepository::from_checkpoint(&ck, Some(cfg.variant))?)
}

fn train(common: &Common, out: Option<PathBuf>, quiet: bool) -> Result<()> {
    let cfg = common.load()?;
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    let start = Instant::now();
    let res = trainer::train_with(&cfg, common.exec(), Some(&dir), |p| match p {
        _ if quiet => {}
        Progress::Round(rows) => {
            for r in rows {
                eprintln!(
                    "update {:>4} step {:>8} {:<26} n={:<5} actor={:+.4} critic={:.4} ent={:.3} success={:.3}",
                    r.update, r.step, r.level, r.records, r.actor_loss, r.critic_loss, r.entropy, r.success_rate
                );
            }
        }
        Progress::Eval(e) => eprintln!("eval   {:>4} step {:>8} success={:.3} return={:.4}", e.update, e.step, e.success_rate, e.mean_return),
    })?;
    println!(
        "trained {} for {} steps ({} rounds, {} episodes) in {:.1}s -> {}",
        cfg.variant,
        res.steps,
        res.rounds,
        res.episodes,
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    if let Some((s, step)) = res.best_eval() {
        println!("best greedy success {s:.3} at step {step}");
    }
    Ok(())
}

fn eval(common: &Common, checkpoint: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let Some(path) = checkpoint.or_else(|| cfg.checkpoint.clone()) else {
        bail!(ConfigError::Invalid {
            key: "checkpoint".into(),
            reason: "eval needs --checkpoint or a `checkpoint` key".into(),
        });
    };
    let repo = load_repo(&path, &cfg)?;
    let mode = if cfg.greedy { EvalMode::Greedy } else { EvalMode::Sampled };
    let seed = rng::derive_seed(cfg.seed, &[tag::EVAL]);
    let log = rollout_eval(&repo, &AgentParams::from_config(&cfg), cfg.layout(), cfg.task, cfg.episodes, seed, mode, common.exec())?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("eval_{}_task{}.csv", cfg.variant, cfg.task)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    log.write_csv(&out)?;
    println!(
        "{} task {}: {} episodes, success {:.3}, mean return {:.4} -> {}",
        cfg.variant,
        cfg.task,
        log.len(),
        log.success_rate(),
        log.mean_return(),
        out.display()
    );
    Ok(())
}

fn trace_episodes(common: &Common, checkpoint: Option<PathBuf>, episodes: usize) -> Result<()> {
    let cfg = common.load()?;
    let Some(path) = checkpoint.or_else(|| cfg.checkpoint.clone()) else {
        bail!(ConfigError::Invalid {
            key: "checkpoint".into(),
            reason: "tracing needs --checkpoint or a `checkpoint` key".into(),
        });
    };
    let repo = load_repo(&path, &cfg)?;
    if repo.meta().is_none() {
        bail!(TrainError::WrongVariant(repo.variant()));
    }
    let params = AgentParams::from_config(&cfg);
    let mode = if cfg.greedy { SelectMode::Greedy } else { SelectMode::Sample };
    let seed = rng::derive_seed(cfg.seed, &[tag::EVAL]);
    for e in 0..episodes {
        let mut env = WorldState::generate(rng::derive_seed(seed, &[tag::EVAL, u64::from(cfg.task), e as u64]), cfg.task, cfg.layout())?;
        let mut r = rng::stream(seed, &[tag::EVAL, u64::from(cfg.task), e as u64, 1]);
        let mut meter = Meter::default();
        println!("episode {e}");
        while !env.is_done() {
            let at = env.steps();
            match agent::meta_step(&mut env, &repo, &params, mode, usize::MAX, &mut r, &mut meter, LowLevel::default())? {
                Some(s) if s.result.steps > 0 => {
                    let rec = &s.recommendation;
                    let cands: Vec<String> = rec
                        .candidate_values
                        .iter()
                        .map(|(i, v)| format!("{}:{}={v:+.3}", i, rec.instance.nodes()[*i].entity_type().map_or("?", |t| t.name())))
                        .collect();
                    println!(
                        "  t={at:<5} {:<13} node {} [{}] -> steps {} success {}{}",
                        s.goal.action.name(),
                        rec.target,
                        cands.join(" "),
                        s.result.steps,
                        s.result.success,
                        if s.result.env_success { " GOAL" } else { "" }
                    );
                }
                _ => {
                    agent::run_fallback(&mut env, params.fallback_budget, &mut r, &mut meter)?;
                    println!("  t={at:<5} fallback");
                }
            }
        }
        println!("  end: steps {} success {}", env.steps(), env.is_success());
    }
    Ok(())
}

fn compare(logs: &[PathBuf], out: &Path, k: usize, metric: GroundMetric) -> Result<()> {
    let logs = logs
        .iter()
        .map(|p| EpisodeLog::read_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(&logs, k, metric)?;
    println!("{:<6} {:>4} {:>8} {:>4} {:>10} {:>10} {:>8}", "variant", "task", "episodes", "k", "top-k", "mean", "success");
    for p in &report.profiles {
        println!(
            "{:<6} {:>4} {:>8} {:>4} {:>10.4} {:>10.4} {:>8.3}",
            p.variant, p.task, p.episodes, p.k, p.mean_topk, p.mean_return, p.success_rate
        );
    }
    for d in &report.distances {
        println!("W({} task {} | task {}) = {:.6}", d.variant, d.task, d.reference_task, d.distance);
    }
    for f in report.write(out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn inspect(common: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let env = WorldState::generate(rng::derive_seed(cfg.seed, &[tag::ENV, 0]), cfg.task, cfg.layout())?;
    let gi = InstanceGraph::from_observation(&env.observe(), env.inventory());
    let gk = TypeGraph::from_instance(&gi)?;
    println!("instance graph\n{}", gi.canonical());
    println!("type graph\n{}", gk.canonical());
    let Some(path) = checkpoint.or_else(|| cfg.checkpoint.clone()) else {
        return Ok(());
    };
    let repo = load_repo(&path, &cfg)?;
    let Some(meta) = repo.meta() else {
        bail!(TrainError::WrongVariant(repo.variant()));
    };
    println!("candidates");
    let held = gi.nodes().iter().find(|n| n.carried);
    for (i, node) in gi.nodes().iter().enumerate().skip(1) {
        let (_, gk2) = activate(&gi, &gk, i)?;
        let out = meta.evaluate(&[gk2.encode()])?;
        let allowed: Vec<&str> = MetaAction::ALL.iter().filter(|a| a.compatible(node, held)).map(|a| a.name()).collect();
        println!(
            "  node {i} {:?}: value {:+.4}, logits {:?}, compatible [{}]",
            node.entity_type()?,
            out[0].value,
            out[0].logits.map(|l| (l * 1e4).round() / 1e4),
            allowed.join(", ")
        );
    }
    Ok(())
}

/// 2 for configuration errors, 3 for i/o and checkpoints, 4 for runtime
/// failures, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<ConfigError>() {
            return if matches!(c, ConfigError::Io { .. }) { 3 } else { 2 };
        }
        if cause.is::<CheckpointError>() || cause.is::<std::io::Error>() {
            return 3;
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::Io { .. } | TrainError::Checkpoint(_) | TrainError::Csv(_) => 3,
                _ => 4,
            };
        }
        if let Some(ev) = cause.downcast_ref::<EvalError>() {
            return match ev {
                EvalError::Io { .. } | EvalError::Csv(_) => 3,
                _ => 4,
            };
        }
        if cause.is::<kix::env::EnvError>() || cause.is::<kix::knowledge::KnowledgeError>() || cause.is::<kix::numeric::NumericError>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Train { common, out, quiet } => train(common, out.clone(), *quiet),
        Cmd::Eval { common, checkpoint, out, trace } => match trace {
            Some(n) => trace_episodes(common, checkpoint.clone(), *n),
            None => eval(common, checkpoint.clone(), out.clone()),
        },
        Cmd::Compare { logs, out, top_k, metric } => compare(logs, out, *top_k, *metric),
        Cmd::InspectGraph { common, checkpoint } => inspect(common, checkpoint.clone()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
