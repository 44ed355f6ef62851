//! Acting in the world: low-level segments, the exploration fallback and the
//! meta decision step. Shared by training and evaluation.

use rand::Rng;

use crate::config::RunConfig;
use crate::env::{Action, Cell, DoorState, ObjectId, StepInfo, WorldState};
use crate::knowledge::{recommend, InstanceGraph, KnowledgeError, MetaAction, Recommendation, RecommendConfig, SelectMode, TypeGraph};
use crate::nets::{ConvPolicy, PolicyRepository, Variant};
use crate::numeric::{argmax, categorical_sample};
use crate::ppo::Record;

use super::TrainError;

/// Budgets and recommender settings an agent acts under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentParams {
    pub interaction_budget: usize,
    pub reach_budget: usize,
    pub fallback_budget: usize,
    pub recommend: RecommendConfig,
    pub meta_bonus_once: bool,
    /// Whether a greedy agent also acts greedily at the primitive level.
    pub greedy_primitives: bool,
}

impl AgentParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            interaction_budget: cfg.interaction_budget,
            reach_budget: cfg.reach_budget,
            fallback_budget: cfg.fallback_budget,
            recommend: cfg.recommend(),
            meta_bonus_once: cfg.meta_bonus_once,
            greedy_primitives: cfg.greedy_primitives,
        }
    }

    /// Selection mode for primitive actions when decisions use `mode`.
    pub fn primitive_mode(&self, mode: SelectMode) -> SelectMode {
        match mode {
            SelectMode::Greedy if self.greedy_primitives => SelectMode::Greedy,
            _ => SelectMode::Sample,
        }
    }
}

/// Counts environment steps and, when enabled, per-room occupancy after
/// each step (interior cells only).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Meter {
    pub steps: u64,
    pub visits: Option<Vec<u64>>,
}

impl Meter {
    pub fn with_visits(rooms: usize) -> Self {
        Self {
            steps: 0,
            visits: Some(vec![0; rooms]),
        }
    }

    fn step(&mut self, env: &mut WorldState, action: Action) -> Result<(f64, StepInfo), TrainError> {
        let r = env.step(action)?;
        self.steps += 1;
        if let (Some(v), Some(room)) = (self.visits.as_mut(), r.info.room) {
            v[room] += 1;
        }
        Ok((r.reward, r.info))
    }
}

/// An `(object, interaction)` goal for the low level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionGoal {
    pub object: ObjectId,
    pub action: MetaAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentResult {
    pub success: bool,
    pub steps: usize,
    /// Environment reward accrued during the segment.
    pub env_reward: f64,
    pub env_done: bool,
    pub env_success: bool,
}

/// State needed to judge a transition against a goal.
#[derive(Debug, Clone, Copy)]
struct Before {
    carried: Option<ObjectId>,
    door: Option<DoorState>,
}

fn door_state(env: &WorldState, id: ObjectId) -> Option<DoorState> {
    match env.position_of(id).map(|p| env.cell(p)) {
        Some(Cell::Door { state, .. }) => Some(*state),
        _ => None,
    }
}

fn before(env: &WorldState, goal: InteractionGoal) -> Before {
    Before {
        carried: env.inventory().map(|k| k.id()),
        door: door_state(env, goal.object),
    }
}

/// Transition predicate for a goal: the step just taken accomplished it.
fn achieved(env: &WorldState, goal: InteractionGoal, b: Before, info: &StepInfo) -> bool {
    let id = goal.object;
    match goal.action {
        MetaAction::Pickup => b.carried != Some(id) && env.inventory().map(|k| k.id()) == Some(id),
        MetaAction::Drop => b.carried == Some(id) && info.dropped == Some(id),
        MetaAction::Reveal => info.opened_box.map(|(bx, _)| bx) == Some(id),
        MetaAction::Open => b.door == Some(DoorState::Closed) && door_state(env, id) == Some(DoorState::Open),
        MetaAction::OpenWithKey => b.door == Some(DoorState::Locked) && door_state(env, id) == Some(DoorState::Open),
    }
}

/// The agent faces the target's cell, or already holds the target.
pub fn reached(env: &WorldState, target: ObjectId) -> bool {
    env.inventory().map(|k| k.id()) == Some(target) || env.front().and_then(|p| env.cell(p).object_id()) == Some(target)
}

fn pick<R: Rng + ?Sized>(probs: &[f64], mode: SelectMode, rng: &mut R) -> Result<(usize, f64), TrainError> {
    Ok(match mode {
        SelectMode::Greedy => {
            let a = argmax(probs);
            (a, probs[a].ln())
        }
        SelectMode::Sample => categorical_sample(probs, rng)?,
    })
}

/// Samples (or argmaxes) one action from `policy` on the given encoded
/// observation. Returns `(action, log-prob, value)`.
pub fn act<R: Rng + ?Sized>(policy: &ConvPolicy, x: &[f64], mode: SelectMode, rng: &mut R) -> Result<(usize, f64, f64), TrainError> {
    let out = policy.infer(&[x])?;
    let (a, lp) = pick(&out.probs(0), mode, rng)?;
    Ok((a, lp, out.values[0]))
}

/// Runs a goal-conditioned policy until `done_when` holds after a step, the
/// budget runs out, or the episode ends. Reward is 1 on the success step.
fn run_goal_policy<R: Rng + ?Sized>(
    env: &mut WorldState,
    target: ObjectId,
    policy: &ConvPolicy,
    budget: usize,
    mode: SelectMode,
    rng: &mut R,
    meter: &mut Meter,
    mut done_when: impl FnMut(&WorldState, &StepInfo) -> bool,
    mut records: Option<&mut Vec<Record<Vec<f64>>>>,
) -> Result<SegmentResult, TrainError> {
    let mut res = SegmentResult::default();
    for t in 0..budget {
        let x = env.observe().encode4(Some(target));
        let (a, log_prob, value) = act(policy, &x, mode, rng)?;
        let (reward, info) = meter.step(env, Action::ALL[a])?;
        res.steps += 1;
        res.env_reward += reward;
        res.success = done_when(env, &info);
        res.env_done = env.is_done();
        res.env_success = env.is_success();
        let done = res.success || res.env_done;
        if let Some(r) = records.as_deref_mut() {
            r.push(Record {
                state: x,
                action: a,
                log_prob,
                value,
                reward: if res.success { 1.0 } else { 0.0 },
                done,
                cut: !done && t + 1 == budget,
                mask: None,
            });
        }
        if done {
            break;
        }
    }
    Ok(res)
}

/// One interaction segment for `goal` under the goal's interaction policy.
pub fn run_interaction_segment<R: Rng + ?Sized>(
    env: &mut WorldState,
    goal: InteractionGoal,
    policy: &ConvPolicy,
    budget: usize,
    mode: SelectMode,
    rng: &mut R,
    meter: &mut Meter,
    records: Option<&mut Vec<Record<Vec<f64>>>>,
) -> Result<SegmentResult, TrainError> {
    if env.is_done() {
        return Err(TrainError::Env(crate::env::EnvError::EpisodeDone));
    }
    if !env.object_exists(goal.object) {
        return Ok(SegmentResult::default());
    }
    let mut b = before(env, goal);
    run_goal_policy(
        env,
        goal.object,
        policy,
        budget,
        mode,
        rng,
        meter,
        |w, info| {
            let ok = achieved(w, goal, b, info);
            b = before(w, goal);
            ok
        },
        records,
    )
}

/// Reach phase: succeeds once the agent faces (or holds) the target,
/// immediately if that already holds.
pub fn run_reach_segment<R: Rng + ?Sized>(
    env: &mut WorldState,
    target: ObjectId,
    policy: &ConvPolicy,
    budget: usize,
    mode: SelectMode,
    rng: &mut R,
    meter: &mut Meter,
    records: Option<&mut Vec<Record<Vec<f64>>>>,
) -> Result<SegmentResult, TrainError> {
    if !env.object_exists(target) {
        return Ok(SegmentResult::default());
    }
    if reached(env, target) {
        return Ok(SegmentResult {
            success: true,
            ..Default::default()
        });
    }
    run_goal_policy(env, target, policy, budget, mode, rng, meter, |w, _| reached(w, target), records)
}

/// Uniform random actions, stopping early if the episode ends.
pub fn run_fallback<R: Rng + ?Sized>(env: &mut WorldState, budget: usize, rng: &mut R, meter: &mut Meter) -> Result<SegmentResult, TrainError> {
    let mut res = SegmentResult::default();
    for _ in 0..budget {
        let a = Action::ALL[rng.gen_range(0..Action::COUNT)];
        let (reward, _) = meter.step(env, a)?;
        res.steps += 1;
        res.env_reward += reward;
        res.env_done = env.is_done();
        res.env_success = env.is_success();
        if res.env_done {
            break;
        }
    }
    Ok(res)
}

/// Outcome of one meta decision and the segments it triggered.
#[derive(Debug, Clone)]
pub struct MetaStep {
    pub recommendation: Recommendation,
    pub goal: InteractionGoal,
    pub result: SegmentResult,
    /// Whether the reach phase ran and succeeded (always true without one).
    pub reach_success: bool,
    pub reach_steps: usize,
}

/// Meta reward: 0.1 for a successful segment (if `bonus`) plus `1 + r` when
/// the segment achieved the environment goal with reward `r`.
pub fn meta_reward(result: &SegmentResult, bonus: bool) -> f64 {
    let mut r = if result.success && bonus { 0.1 } else { 0.0 };
    if result.env_success {
        r += 1.0 + result.env_reward;
    }
    r
}

/// Low-level experience produced by one meta step.
#[derive(Debug, Default)]
pub struct LowLevel<'a> {
    pub interaction: Option<&'a mut Vec<Record<Vec<f64>>>>,
    pub reach: Option<&'a mut Vec<Record<Vec<f64>>>>,
}

/// Builds the graphs for the current view, asks the recommender for a goal
/// and executes it. `Ok(None)` means no object admits an interaction.
/// `budget` caps the total low-level steps of this decision. `mode` drives
/// the recommender; primitives follow [`AgentParams::primitive_mode`].
#[allow(clippy::too_many_arguments)]
pub fn meta_step<R: Rng + ?Sized>(
    env: &mut WorldState,
    repo: &PolicyRepository,
    params: &AgentParams,
    mode: SelectMode,
    budget: usize,
    rng: &mut R,
    meter: &mut Meter,
    low: LowLevel<'_>,
) -> Result<Option<MetaStep>, TrainError> {
    let meta = repo.meta().ok_or(TrainError::WrongVariant(repo.variant()))?;
    let gi = InstanceGraph::from_observation(&env.observe(), env.inventory());
    let gk = TypeGraph::from_instance(&gi)?;
    let rec = match recommend(&gi, &gk, meta, mode, &params.recommend, rng) {
        Ok(r) => r,
        Err(KnowledgeError::NoCandidates) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let object = rec.object.ok_or_else(|| TrainError::Knowledge(KnowledgeError::Malformed("target without identity".into())))?;
    let goal = InteractionGoal { object, action: rec.action };
    let policy = repo.interaction(goal.action).expect("kix repositories hold every interaction net");
    let low_mode = params.primitive_mode(mode);
    let mut reach_success = true;
    let mut reach_steps = 0;
    let mut left = budget;
    if repo.variant() == Variant::Kix2 {
        let reach = repo.reach().expect("kix2 holds a reach net");
        let r = run_reach_segment(env, object, reach, params.reach_budget.min(left), low_mode, rng, meter, low.reach)?;
        reach_success = r.success;
        reach_steps = r.steps;
        left -= r.steps;
        if !r.success || r.env_done || left == 0 {
            let result = SegmentResult {
                success: false,
                steps: r.steps,
                env_reward: r.env_reward,
                env_done: r.env_done,
                env_success: r.env_success,
            };
            return Ok(Some(MetaStep {
                recommendation: rec,
                goal,
                result,
                reach_success,
                reach_steps,
            }));
        }
    }
    let mut result = run_interaction_segment(env, goal, policy, params.interaction_budget.min(left), low_mode, rng, meter, low.interaction)?;
    result.steps += reach_steps;
    Ok(Some(MetaStep {
        recommendation: rec,
        goal,
        result,
        reach_success,
        reach_steps,
    }))
}

/// Plays one full episode without learning. Returns the environment return.
pub fn play_episode<R: Rng + ?Sized>(
    env: &mut WorldState,
    repo: &PolicyRepository,
    params: &AgentParams,
    mode: SelectMode,
    rng: &mut R,
    meter: &mut Meter,
) -> Result<f64, TrainError> {
    let mut ret = 0.0;
    while !env.is_done() {
        let step = match repo.variant() {
            Variant::Base => {
                let x = env.observe().encode3();
                let (a, _, _) = act(repo.base().expect("base net"), &x, params.primitive_mode(mode), rng)?;
                let (r, _) = meter.step(env, Action::ALL[a])?;
                ret += r;
                continue;
            }
            _ => meta_step(env, repo, params, mode, usize::MAX, rng, meter, LowLevel::default())?,
        };
        match step {
            Some(s) if s.result.steps > 0 => ret += s.result.env_reward,
            _ => ret += run_fallback(env, params.fallback_budget, rng, meter)?.env_reward,
        }
    }
    Ok(ret)
}
