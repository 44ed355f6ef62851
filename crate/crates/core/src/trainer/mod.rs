//! The training loop: parallel collection rounds on frozen policy snapshots,
//! followed by PPO updates of every level that gathered experience.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml             resolved configuration (re-runnable)
//! train_log.csv           one row per (round, level) update
//! train_eval.csv          in-training greedy evaluations, if enabled
//! checkpoint_init.kix     freshly initialized networks
//! checkpoint_NNNNNN.kix   periodic snapshots, if enabled
//! checkpoint_final.kix    networks after the last round
//! checkpoint_last_good.kix  written only when an update fails
//! ```

pub mod agent;
pub mod collect;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::env::EnvError;
use crate::eval::{rollout_eval, EvalMode};
use crate::exec::Exec;
use crate::knowledge::{KnowledgeError, MetaAction};
use crate::nets::{NetKind, PolicyRepository, Variant};
use crate::numeric::{Checkpoint, CheckpointError, NumericError};
use crate::ppo::{ppo_update, PpoError, UpdateReport};
use crate::rng::{self, tag};

pub use agent::{AgentParams, InteractionGoal, Meter, SegmentResult};
pub use collect::{Batch, EpisodeSummary, SegmentStats, Worker};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("update of {level}: {source}")]
    Update { level: String, source: PpoError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(String),
    #[error("operation not available for a {0} agent")]
    WrongVariant(Variant),
}

impl From<csv::Error> for TrainError {
    fn from(e: csv::Error) -> Self {
        TrainError::Csv(e.to_string())
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub update: usize,
    pub step: u64,
    pub episode: u64,
    pub variant: String,
    pub level: String,
    pub records: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    /// Segment success rate for low-level policies, episode success rate for
    /// meta and base rows.
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub update: usize,
    pub step: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub repo: PolicyRepository,
    pub steps: u64,
    pub episodes: u64,
    pub rounds: usize,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalRow>,
}

impl TrainOutcome {
    /// Best in-training evaluation success rate, with the step it was reached at.
    pub fn best_eval(&self) -> Option<(f64, u64)> {
        self.evals.iter().fold(None, |best, e| match best {
            Some((s, _)) if s >= e.success_rate => best,
            _ => Some((e.success_rate, e.step)),
        })
    }
}

/// Splits `total` into `parts` near-equal shares, larger shares first.
pub fn split(total: u64, parts: usize) -> Vec<u64> {
    let p = parts as u64;
    (0..p).map(|i| total / p + u64::from(i < total % p)).collect()
}

pub fn checkpoint_for(repo: &PolicyRepository, cfg: &RunConfig, rounds: usize, steps: u64) -> Checkpoint {
    let mut ck = repo.to_checkpoint();
    ck.meta.push(("task".into(), cfg.task.to_string()));
    ck.meta.push(("rounds".into(), rounds.to_string()));
    ck.meta.push(("steps".into(), steps.to_string()));
    ck.texts.push(("config".into(), cfg.to_toml()));
    ck
}

fn save(ck: &Checkpoint, dir: Option<&Path>, name: &str) -> Result<(), TrainError> {
    if let Some(d) = dir {
        ck.save(&d.join(name))?;
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), TrainError> {
    let mut w = csv::WriterBuilder::new().has_headers(rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub const LOG_HEADER: [&str; 12] = [
    "update",
    "step",
    "episode",
    "variant",
    "level",
    "records",
    "actor_loss",
    "critic_loss",
    "entropy",
    "grad_norm",
    "success_rate",
    "mean_return",
];

/// Trains the configured variant. With `out_dir` set, writes the echoed
/// config, logs and checkpoints there.
pub fn train(cfg: &RunConfig, exec: Exec, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, exec, out_dir, |_| {})
}

/// What [`train_with`] reports while running.
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    /// Log rows of the round just finished.
    Round(&'a [LogRow]),
    Eval(&'a EvalRow),
}

/// [`train`] with a callback invoked after every round and evaluation.
pub fn train_with(cfg: &RunConfig, exec: Exec, out_dir: Option<&Path>, mut progress: impl FnMut(Progress<'_>)) -> Result<TrainOutcome, TrainError> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
        let p = d.join("config.toml");
        std::fs::write(&p, cfg.to_toml()).map_err(io_err(&p))?;
    }
    let mut repo = PolicyRepository::new(cfg.variant, rng::derive_seed(cfg.seed, &[tag::INIT]))?;
    save(&checkpoint_for(&repo, cfg, 0, 0), out_dir, "checkpoint_init.kix")?;
    let params = AgentParams::from_config(cfg);
    let mut workers = (0..cfg.workers).map(|w| Worker::new(w, cfg)).collect::<Result<Vec<_>, _>>()?;
    let mut out = TrainOutcome {
        repo: repo.clone(),
        steps: 0,
        episodes: 0,
        rounds: 0,
        log: Vec::new(),
        evals: Vec::new(),
    };
    let quotas = split(cfg.meta_batch as u64, cfg.workers);
    // experience not yet consumed by an update; low-level records carry over
    // between rounds until their net has enough
    let mut pending = Batch::default();
    let eval_seed = rng::derive_seed(cfg.seed, &[tag::EVAL]);

    while out.steps < cfg.total_steps {
        let round = out.rounds;
        let allowances = split(cfg.total_steps - out.steps, cfg.workers);
        let jobs: Vec<(Worker, u64, u64)> = workers.into_iter().zip(allowances).zip(quotas.iter().copied()).map(|((w, a), q)| (w, a, q)).collect();
        let snapshot = &repo;
        let results = exec.map(jobs, |(mut w, allowance, quota)| {
            let mut r = rng::stream(cfg.seed, &[tag::POLICY, round as u64, w.id as u64]);
            let b = match snapshot.variant() {
                Variant::Base => collect::collect_base(&mut w, snapshot, allowance.min(cfg.base_rollout as u64), &mut r),
                _ => collect::collect_kix(&mut w, snapshot, &params, quota as usize, allowance, &mut r),
            };
            (w, b)
        });
        workers = Vec::with_capacity(cfg.workers);
        let mut batches = Vec::with_capacity(cfg.workers);
        for (w, b) in results {
            workers.push(w);
            batches.push(b?);
        }
        let merged = merge(batches);
        out.steps += merged.steps;
        out.episodes += merged.episodes.len() as u64;
        out.rounds += 1;
        pending = merge(vec![std::mem::take(&mut pending), merged]);

        let last_good = repo.clone();
        let rows = update_all(&mut repo, cfg, round, &mut pending, &out).map_err(|e| {
            let _ = save(&checkpoint_for(&last_good, cfg, round, out.steps), out_dir, "checkpoint_last_good.kix");
            e
        })?;
        progress(Progress::Round(&rows));
        out.log.extend(rows);

        if cfg.eval_every > 0 && out.rounds % cfg.eval_every == 0 {
            let log = rollout_eval(&repo, &params, cfg.layout(), cfg.task, cfg.eval_episodes, eval_seed, EvalMode::Greedy, exec)?;
            out.evals.push(EvalRow {
                update: out.rounds,
                step: out.steps,
                episodes: log.len(),
                success_rate: log.success_rate(),
                mean_return: log.mean_return(),
            });
            progress(Progress::Eval(out.evals.last().expect("just pushed")));
            if cfg.stop_at_success > 0.0 && log.success_rate() >= cfg.stop_at_success {
                break;
            }
        }
        if cfg.checkpoint_every > 0 && out.rounds % cfg.checkpoint_every == 0 {
            save(&checkpoint_for(&repo, cfg, out.rounds, out.steps), out_dir, &format!("checkpoint_{:06}.kix", out.rounds))?;
        }
    }

    if out.rounds > 0 {
        save(&checkpoint_for(&repo, cfg, out.rounds, out.steps), out_dir, "checkpoint_final.kix")?;
    }
    if let Some(d) = out_dir {
        write_csv(&d.join("train_log.csv"), &out.log, &LOG_HEADER)?;
        if cfg.eval_every > 0 {
            write_csv(&d.join("train_eval.csv"), &out.evals, &["update", "step", "episodes", "success_rate", "mean_return"])?;
        }
    }
    out.repo = repo;
    Ok(out)
}

/// Concatenates worker batches in worker order.
fn merge(batches: Vec<Batch>) -> Batch {
    let mut m = Batch::default();
    for b in batches {
        m.steps += b.steps;
        m.meta.extend(b.meta);
        for (i, recs) in b.interaction.into_iter().enumerate() {
            m.interaction[i].extend(recs);
            m.interaction_stats[i].merge(&b.interaction_stats[i]);
        }
        m.reach.extend(b.reach);
        m.reach_stats.merge(&b.reach_stats);
        m.base.extend(b.base);
        m.fallback_steps += b.fallback_steps;
        m.episodes.extend(b.episodes);
    }
    m
}

/// Updates the meta net on this round's records and every low-level net
/// whose pending records reached `low_level_batch`. Consumed records are
/// removed from `b`.
fn update_all(repo: &mut PolicyRepository, cfg: &RunConfig, round: usize, b: &mut Batch, out: &TrainOutcome) -> Result<Vec<LogRow>, TrainError> {
    let episodes = std::mem::take(&mut b.episodes);
    let n_ep = episodes.len();
    let ep_success = if n_ep == 0 { 0.0 } else { episodes.iter().filter(|e| e.success).count() as f64 / n_ep as f64 };
    let ep_return = if n_ep == 0 { 0.0 } else { episodes.iter().map(|e| e.ret).sum::<f64>() / n_ep as f64 };
    let mut rows = Vec::new();
    let row = |kind: NetKind, rep: UpdateReport, success_rate: f64| LogRow {
        update: round,
        step: out.steps,
        episode: out.episodes,
        variant: cfg.variant.name().into(),
        level: kind.key(),
        records: rep.records,
        actor_loss: rep.actor_loss,
        critic_loss: rep.critic_loss,
        entropy: rep.entropy,
        grad_norm: rep.grad_norm,
        success_rate,
        mean_return: ep_return,
    };
    let stream = |kind: NetKind| {
        let k = repo_index(kind);
        rng::stream(cfg.seed, &[tag::UPDATE, round as u64, k])
    };
    let fail = |kind: NetKind| move |source: PpoError| TrainError::Update { level: kind.key(), source };
    let ready = |n: usize| n >= cfg.low_level_batch;

    let meta_records = std::mem::take(&mut b.meta);
    if let Some(meta) = repo.meta_mut() {
        if !meta_records.is_empty() {
            let rep = ppo_update(meta, &meta_records, &cfg.meta_ppo(), &mut stream(NetKind::Meta)).map_err(fail(NetKind::Meta))?;
            rows.push(row(NetKind::Meta, rep, ep_success));
        }
    }
    for a in MetaAction::ALL {
        let i = a.index();
        let kind = NetKind::Interaction(a);
        if let (Some(net), true) = (repo.interaction_mut(a), ready(b.interaction[i].len())) {
            let rep = ppo_update(net, &b.interaction[i], &cfg.ppo(), &mut stream(kind)).map_err(fail(kind))?;
            rows.push(row(kind, rep, b.interaction_stats[i].rate()));
            b.interaction[i].clear();
            b.interaction_stats[i] = SegmentStats::default();
        }
    }
    if let (Some(net), true) = (repo.reach_mut(), ready(b.reach.len())) {
        let rep = ppo_update(net, &b.reach, &cfg.ppo(), &mut stream(NetKind::Reach)).map_err(fail(NetKind::Reach))?;
        rows.push(row(NetKind::Reach, rep, b.reach_stats.rate()));
        b.reach.clear();
        b.reach_stats = SegmentStats::default();
    }
    if let (Some(net), true) = (repo.base_mut(), ready(b.base.len())) {
        let rep = ppo_update(net, &b.base, &cfg.ppo(), &mut stream(NetKind::Base)).map_err(fail(NetKind::Base))?;
        rows.push(row(NetKind::Base, rep, ep_success));
        b.base.clear();
    }
    Ok(rows)
}

fn repo_index(kind: NetKind) -> u64 {
    match kind {
        NetKind::Meta => 0,
        NetKind::Interaction(a) => 1 + a.index() as u64,
        NetKind::Reach => 10,
        NetKind::Base => 11,
    }
}
