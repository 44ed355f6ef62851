//! Evaluation rollouts, top-k return profiles, room visitation and the
//! comparison report.

pub mod report;
pub mod wasserstein;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Layout, WorldState};
use crate::exec::Exec;
use crate::knowledge::SelectMode;
use crate::nets::PolicyRepository;
use crate::rng::{self, tag};
use crate::trainer::agent::{play_episode, AgentParams, Meter};
use crate::trainer::TrainError;

pub use report::{build_report, DistanceRow, ProfileRow, Report};
pub use wasserstein::{cost_matrix, ground_cost, wasserstein_exact};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error("no room visits recorded")]
    NoVisits,
    #[error("{0}")]
    Invalid(String),
    #[error("logs disagree: {0}")]
    Mismatch(String),
    #[error("i/o on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    #[default]
    Greedy,
    Sampled,
}

impl EvalMode {
    pub fn select(self) -> SelectMode {
        match self {
            EvalMode::Greedy => SelectMode::Greedy,
            EvalMode::Sampled => SelectMode::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub variant: String,
    pub task: u8,
    pub seed: u64,
    pub episode: usize,
    pub env_seed: u64,
    pub ret: f64,
    pub success: bool,
    pub steps: u32,
    pub rows: usize,
    pub cols: usize,
    /// Steps ending in each room's interior, row-major.
    pub visits: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    variant: String,
    task: u8,
    seed: u64,
    episode: usize,
    env_seed: u64,
    #[serde(rename = "return")]
    ret: f64,
    success: bool,
    steps: u32,
    rows: usize,
    cols: usize,
    visits: String,
}

impl From<&EpisodeRecord> for CsvRow {
    fn from(r: &EpisodeRecord) -> Self {
        CsvRow {
            variant: r.variant.clone(),
            task: r.task,
            seed: r.seed,
            episode: r.episode,
            env_seed: r.env_seed,
            ret: r.ret,
            success: r.success,
            steps: r.steps,
            rows: r.rows,
            cols: r.cols,
            visits: r.visits.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

impl TryFrom<CsvRow> for EpisodeRecord {
    type Error = EvalError;

    fn try_from(r: CsvRow) -> Result<Self, EvalError> {
        let visits = if r.visits.is_empty() {
            Vec::new()
        } else {
            r.visits
                .split(';')
                .map(|v| v.parse::<u64>().map_err(|_| EvalError::Invalid(format!("bad visit count {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?
        };
        if visits.len() != r.rows * r.cols {
            return Err(EvalError::Invalid(format!("episode {}: {} visit counts for a {}x{} grid", r.episode, visits.len(), r.rows, r.cols)));
        }
        Ok(EpisodeRecord {
            variant: r.variant,
            task: r.task,
            seed: r.seed,
            episode: r.episode,
            env_seed: r.env_seed,
            ret: r.ret,
            success: r.success,
            steps: r.steps,
            rows: r.rows,
            cols: r.cols,
            visits,
        })
    }
}

/// Per-episode results of one evaluation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub records: Vec<EpisodeRecord>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ret).collect()
    }

    pub fn success_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.success).count() as f64 / self.len() as f64
    }

    pub fn mean_return(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.ret).sum::<f64>() / self.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush().map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_csv(path: &Path) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_path(path)?;
        let records = rd.deserialize::<CsvRow>().map(|row| EpisodeRecord::try_from(row?)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }
}

/// Plays `episodes` evaluation episodes on `task`. Episode `e` runs on the
/// environment seeded from `(seed, task, e)` regardless of worker count.
#[allow(clippy::too_many_arguments)]
pub fn rollout_eval(
    repo: &PolicyRepository,
    params: &AgentParams,
    layout: Layout,
    task: u8,
    episodes: usize,
    seed: u64,
    mode: EvalMode,
    exec: Exec,
) -> Result<EpisodeLog, TrainError> {
    let records = exec.map_range(episodes, |e| {
        let env_seed = rng::derive_seed(seed, &[tag::EVAL, u64::from(task), e as u64]);
        let mut env = WorldState::generate(env_seed, task, layout)?;
        let mut r = rng::stream(seed, &[tag::EVAL, u64::from(task), e as u64, 1]);
        let mut meter = Meter::with_visits(layout.num_rooms());
        let ret = play_episode(&mut env, repo, params, mode.select(), &mut r, &mut meter)?;
        Ok(EpisodeRecord {
            variant: repo.variant().name().to_string(),
            task,
            seed,
            episode: e,
            env_seed,
            ret,
            success: env.is_success(),
            steps: env.steps(),
            rows: layout.rows,
            cols: layout.cols,
            visits: meter.visits.unwrap_or_default(),
        })
    });
    Ok(EpisodeLog {
        records: records.into_iter().collect::<Result<Vec<_>, TrainError>>()?,
    })
}

/// The `k` largest values, in descending order. Equal values keep their
/// original order.
pub fn top_k(returns: &[f64], k: usize) -> Vec<f64> {
    let mut v = returns.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(k);
    v
}

/// `k` shrunk to a tenth of the episode count for small runs, and at least 1.
pub fn effective_k(k: usize, episodes: usize) -> usize {
    k.min(episodes / 10).max(1).min(episodes)
}

/// Normalized room occupancy summed over every episode of the log.
pub fn visit_distribution(log: &EpisodeLog) -> Result<Vec<f64>, EvalError> {
    let first = log.records.first().ok_or(EvalError::NoEpisodes)?;
    let mut counts = vec![0u64; first.visits.len()];
    for r in &log.records {
        if r.visits.len() != counts.len() {
            return Err(EvalError::Mismatch(format!("episode {} has {} rooms, expected {}", r.episode, r.visits.len(), counts.len())));
        }
        counts.iter_mut().zip(&r.visits).for_each(|(c, v)| *c += v);
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(EvalError::NoVisits);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ret: f64, visits: Vec<u64>) -> EpisodeRecord {
        EpisodeRecord {
            variant: "kix1".into(),
            task: 0,
            seed: 3,
            episode: 0,
            env_seed: 9,
            ret,
            success: ret > 0.0,
            steps: 10,
            rows: 1,
            cols: 2,
            visits,
        }
    }

    #[test]
    fn top_k_descending() {
        assert_eq!(top_k(&[0.1, 0.9, 0.5, 0.9], 3), vec![0.9, 0.9, 0.5]);
        assert_eq!(top_k(&[0.2], 5), vec![0.2]);
        assert_eq!(effective_k(100, 1000), 100);
        assert_eq!(effective_k(100, 60), 6);
        assert_eq!(effective_k(100, 5), 1);
    }

    #[test]
    fn visits_normalize() {
        let log = EpisodeLog {
            records: vec![rec(0.5, vec![3, 1]), rec(0.0, vec![0, 4])],
        };
        assert_eq!(visit_distribution(&log).unwrap(), vec![3.0 / 8.0, 5.0 / 8.0]);
        let empty = EpisodeLog { records: vec![rec(0.0, vec![0, 0])] };
        assert!(matches!(visit_distribution(&empty), Err(EvalError::NoVisits)));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = EpisodeLog {
            records: vec![rec(0.25, vec![7, 0]), rec(0.0, vec![1, 2])],
        };
        log.write_csv(&p).unwrap();
        assert_eq!(EpisodeLog::read_csv(&p).unwrap(), log);
    }
}
