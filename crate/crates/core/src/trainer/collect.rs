//! Per-worker experience collection for one round.

use std::collections::HashSet;

use crate::config::RunConfig;
use crate::env::{ObjectId, WorldState};
use crate::knowledge::{MetaAction, SelectMode};
use crate::nets::PolicyRepository;
use crate::numeric::GraphBatch;
use crate::ppo::Record;
use crate::rng::{self, tag, Rng};

use super::agent::{act, meta_reward, meta_step, run_fallback, AgentParams, LowLevel, Meter};
use super::TrainError;

/// A rollout worker: owns its environment across rounds. Worker `w` of `W`
/// plays global episodes `w, w + W, w + 2W, ...`, each seeded from the root
/// seed and its episode index alone.
#[derive(Debug, Clone)]
pub struct Worker {
    pub id: usize,
    pub env: WorldState,
    pub episode: u64,
    stride: u64,
    root: u64,
    task: u8,
    episode_return: f64,
    /// Goals that already earned the segment bonus this episode.
    rewarded: HashSet<(ObjectId, MetaAction)>,
}

pub fn episode_seed(root: u64, episode: u64) -> u64 {
    rng::derive_seed(root, &[tag::ENV, episode])
}

impl Worker {
    pub fn new(id: usize, cfg: &RunConfig) -> Result<Self, TrainError> {
        let episode = id as u64;
        Ok(Self {
            id,
            env: WorldState::generate(episode_seed(cfg.seed, episode), cfg.task, cfg.layout())?,
            episode,
            stride: cfg.workers as u64,
            root: cfg.seed,
            task: cfg.task,
            episode_return: 0.0,
            rewarded: HashSet::new(),
        })
    }

    fn next_episode(&mut self) -> Result<(), TrainError> {
        self.episode += self.stride;
        self.env = WorldState::generate(episode_seed(self.root, self.episode), self.task, *self.env.layout())?;
        self.episode_return = 0.0;
        self.rewarded.clear();
        Ok(())
    }

    fn finish_if_done(&mut self, batch: &mut Batch) -> Result<bool, TrainError> {
        if !self.env.is_done() {
            return Ok(false);
        }
        batch.episodes.push(EpisodeSummary {
            episode: self.episode,
            ret: self.episode_return,
            success: self.env.is_success(),
            steps: self.env.steps(),
        });
        self.next_episode()?;
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub ret: f64,
    pub success: bool,
    pub steps: u32,
}

/// Attempts and successes of one low-level policy within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SegmentStats {
    pub attempts: u64,
    pub successes: u64,
}

impl SegmentStats {
    fn add(&mut self, success: bool) {
        self.attempts += 1;
        self.successes += u64::from(success);
    }

    pub fn merge(&mut self, o: &SegmentStats) {
        self.attempts += o.attempts;
        self.successes += o.successes;
    }

    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

/// Experience one worker gathered in one round.
#[derive(Debug, Default)]
pub struct Batch {
    pub steps: u64,
    pub meta: Vec<Record<GraphBatch>>,
    pub interaction: [Vec<Record<Vec<f64>>>; MetaAction::COUNT],
    pub interaction_stats: [SegmentStats; MetaAction::COUNT],
    pub reach: Vec<Record<Vec<f64>>>,
    pub reach_stats: SegmentStats,
    pub base: Vec<Record<Vec<f64>>>,
    pub fallback_steps: u64,
    pub episodes: Vec<EpisodeSummary>,
}

/// Collects up to `quota` meta records, never exceeding `allowance` env steps.
pub fn collect_kix(worker: &mut Worker, repo: &PolicyRepository, params: &AgentParams, quota: usize, allowance: u64, rng: &mut Rng) -> Result<Batch, TrainError> {
    let mut batch = Batch::default();
    let mut meter = Meter::default();
    // whether the newest meta record belongs to the episode in progress
    let mut open = false;
    while batch.meta.len() < quota && meter.steps < allowance {
        let left = (allowance - meter.steps) as usize;
        let mut interaction = Vec::new();
        let mut reach = Vec::new();
        let low = LowLevel {
            interaction: Some(&mut interaction),
            reach: Some(&mut reach),
        };
        let step = meta_step(&mut worker.env, repo, params, SelectMode::Sample, left, rng, &mut meter, low)?;
        match step {
            Some(s) if s.result.steps > 0 || s.result.success => {
                let a = s.goal.action;
                if repo.reach().is_some() {
                    batch.reach_stats.add(s.reach_success);
                }
                if s.reach_success {
                    batch.interaction_stats[a.index()].add(s.result.success);
                }
                batch.interaction[a.index()].extend(interaction);
                batch.reach.extend(reach);
                worker.episode_return += s.result.env_reward;
                let bonus = !params.meta_bonus_once || (s.result.success && worker.rewarded.insert((s.goal.object, a)));
                let rec = s.recommendation;
                batch.meta.push(Record {
                    state: rec.state,
                    action: rec.action.index(),
                    log_prob: rec.log_prob,
                    value: rec.value,
                    reward: meta_reward(&s.result, bonus),
                    done: worker.env.is_done(),
                    cut: false,
                    mask: Some(rec.mask.to_vec()),
                });
                open = true;
            }
            _ => {
                let budget = params.fallback_budget.min(left);
                let r = run_fallback(&mut worker.env, budget, rng, &mut meter)?;
                batch.fallback_steps += r.steps as u64;
                worker.episode_return += r.env_reward;
                if worker.env.is_done() && open {
                    batch.meta.last_mut().expect("open record").done = true;
                }
            }
        }
        if worker.finish_if_done(&mut batch)? {
            open = false;
        }
    }
    if let Some(last) = batch.meta.last_mut() {
        if !last.done {
            last.cut = true;
        }
    }
    batch.steps = meter.steps;
    Ok(batch)
}

/// Flat rollout of the base agent for up to `steps` environment steps.
pub fn collect_base(worker: &mut Worker, repo: &PolicyRepository, steps: u64, rng: &mut Rng) -> Result<Batch, TrainError> {
    let mut batch = Batch::default();
    let mut meter = Meter::default();
    let net = repo.base().ok_or(TrainError::WrongVariant(repo.variant()))?;
    while meter.steps < steps {
        let x = worker.env.observe().encode3();
        let (a, log_prob, value) = act(net, &x, SelectMode::Sample, rng)?;
        let r = worker.env.step(crate::env::Action::ALL[a])?;
        meter.steps += 1;
        worker.episode_return += r.reward;
        batch.base.push(Record {
            state: x,
            action: a,
            log_prob,
            value,
            reward: r.reward,
            done: r.done,
            cut: false,
            mask: None,
        });
        worker.finish_if_done(&mut batch)?;
    }
    if let Some(last) = batch.base.last_mut() {
        if !last.done {
            last.cut = true;
        }
    }
    batch.steps = meter.steps;
    Ok(batch)
}
