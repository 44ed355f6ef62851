//! Comparison report across variants and tasks: top-k return profiles and
//! visitation distances to task 0, as CSV tables and SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::GroundMetric;

use super::{cost_matrix, effective_k, top_k, visit_distribution, wasserstein_exact, EpisodeLog, EpisodeRecord, EvalError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub variant: String,
    pub task: u8,
    pub episodes: usize,
    pub k: usize,
    pub mean_topk: f64,
    pub min_topk: f64,
    pub max_topk: f64,
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub variant: String,
    pub task: u8,
    pub reference_task: u8,
    pub metric: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TopKRow<'a> {
    variant: &'a str,
    task: u8,
    rank: usize,
    #[serde(rename = "return")]
    ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub profiles: Vec<ProfileRow>,
    pub distances: Vec<DistanceRow>,
    /// Top-k returns per `(variant, task)`, descending.
    pub topk: BTreeMap<(String, u8), Vec<f64>>,
}

fn metric_name(m: GroundMetric) -> &'static str {
    match m {
        GroundMetric::Manhattan => "manhattan",
        GroundMetric::Index => "index",
        GroundMetric::Uniform => "uniform",
    }
}

/// Groups episodes by `(variant, task)` and summarizes each group. Logs with
/// the same key are pooled.
pub fn build_report(logs: &[EpisodeLog], k: usize, metric: GroundMetric) -> Result<Report, EvalError> {
    let mut groups: BTreeMap<(String, u8), EpisodeLog> = BTreeMap::new();
    let mut grid: Option<(usize, usize)> = None;
    for r in logs.iter().flat_map(|l| &l.records) {
        match grid {
            None => grid = Some((r.rows, r.cols)),
            Some(g) if g != (r.rows, r.cols) => {
                return Err(EvalError::Mismatch(format!("room grids {}x{} and {}x{}", g.0, g.1, r.rows, r.cols)));
            }
            _ => {}
        }
        groups.entry((r.variant.clone(), r.task)).or_default().records.push(r.clone());
    }
    let (_, cols) = grid.ok_or(EvalError::NoEpisodes)?;

    let mut profiles = Vec::new();
    let mut topk = BTreeMap::new();
    for ((variant, task), log) in &groups {
        let kk = effective_k(k, log.len());
        let best = top_k(&log.returns(), kk);
        profiles.push(ProfileRow {
            variant: variant.clone(),
            task: *task,
            episodes: log.len(),
            k: kk,
            mean_topk: best.iter().sum::<f64>() / best.len() as f64,
            min_topk: best.iter().copied().fold(f64::INFINITY, f64::min),
            max_topk: best.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_return: log.mean_return(),
            success_rate: log.success_rate(),
        });
        topk.insert((variant.clone(), *task), best);
    }

    let mut distances = Vec::new();
    for ((variant, task), log) in &groups {
        if *task == 0 {
            continue;
        }
        let Some(reference) = groups.get(&(variant.clone(), 0)) else {
            continue;
        };
        let p = visit_distribution(reference)?;
        let q = visit_distribution(log)?;
        let c = cost_matrix(metric, p.len(), cols);
        distances.push(DistanceRow {
            variant: variant.clone(),
            task: *task,
            reference_task: 0,
            metric: metric_name(metric).into(),
            distance: wasserstein_exact(&p, &q, &c)?,
        });
    }
    Ok(Report { profiles, distances, topk })
}

impl Report {
    pub fn profile(&self, variant: &str, task: u8) -> Option<&ProfileRow> {
        self.profiles.iter().find(|p| p.variant == variant && p.task == task)
    }

    /// Writes `profiles.csv`, `topk.csv`, `distances.csv` and two SVG charts
    /// into `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut out = Vec::new();

        let p = dir.join("profiles.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for r in &self.profiles {
            w.serialize(r)?;
        }
        w.flush().map_err(io(&p))?;
        out.push(p);

        let p = dir.join("topk.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for ((variant, task), rets) in &self.topk {
            for (rank, &ret) in rets.iter().enumerate() {
                w.serialize(TopKRow { variant, task: *task, rank: rank + 1, ret })?;
            }
        }
        w.flush().map_err(io(&p))?;
        out.push(p);

        let p = dir.join("distances.csv");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&p)?;
        w.write_record(["variant", "task", "reference_task", "metric", "distance"])?;
        for r in &self.distances {
            w.serialize(r)?;
        }
        w.flush().map_err(io(&p))?;
        out.push(p);

        let bars = |f: &dyn Fn(&ProfileRow) -> f64| {
            self.profiles.iter().map(|r| (format!("task {}", r.task), r.variant.clone(), f(r))).collect::<Vec<_>>()
        };
        let p = dir.join("profiles.svg");
        std::fs::write(&p, bar_chart("mean top-k return", &bars(&|r| r.mean_topk))).map_err(io(&p))?;
        out.push(p);

        let d = self.distances.iter().map(|r| (format!("task {}", r.task), r.variant.clone(), r.distance)).collect::<Vec<_>>();
        let p = dir.join("distances.svg");
        std::fs::write(&p, bar_chart("visitation distance to task 0", &d)).map_err(io(&p))?;
        out.push(p);
        Ok(out)
    }
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart of `(group, series, value)` triples.
fn bar_chart(title: &str, bars: &[(String, String, f64)]) -> String {
    let mut groups: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for (g, s, _) in bars {
        if !groups.contains(&g.as_str()) {
            groups.push(g);
        }
        if !series.contains(&s.as_str()) {
            series.push(s);
        }
    }
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let top = bars.iter().map(|b| b.2).fold(0.0_f64, f64::max).max(1e-9);
    let low = bars.iter().map(|b| b.2).fold(0.0_f64, f64::min);
    let span = top - low;
    let y = |v: f64| pad + (top - v) / span * (h - 2.0 * pad);
    let slot = (w - 2.0 * pad) / groups.len().max(1) as f64;
    let bw = slot * 0.8 / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="black"/>"#, y(0.0), w - pad);
    for (g, s_name, v) in bars {
        let gi = groups.iter().position(|x| x == g).unwrap_or(0);
        let si = series.iter().position(|x| x == s_name).unwrap_or(0);
        let x = pad + gi as f64 * slot + slot * 0.1 + si as f64 * bw;
        let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y0:.2}" width="{bw:.2}" height="{:.2}" fill="{}"><title>{s_name} {g}: {v:.4}</title></rect>"#,
            (y1 - y0).max(0.5),
            PALETTE[si % PALETTE.len()]
        );
    }
    for (gi, g) in groups.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{g}</text>"#, pad + (gi as f64 + 0.5) * slot, h - pad + 18.0);
    }
    for (si, name) in series.iter().enumerate() {
        let ly = pad + 16.0 * si as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{ly}" width="10" height="10" fill="{}"/>"#, w - pad - 70.0, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, w - pad - 55.0, ly + 9.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Pools the records of several logs.
pub fn pool(logs: &[EpisodeLog]) -> EpisodeLog {
    EpisodeLog {
        records: logs.iter().flat_map(|l| l.records.iter().cloned()).collect::<Vec<EpisodeRecord>>(),
    }
}
