//! Exact earth mover's distance between discrete distributions on a shared
//! support, solved as a min-cost flow with successive shortest paths.

use crate::config::GroundMetric;

use super::EvalError;

/// Mass below this is treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Tolerance on the difference of total masses.
const MASS_TOL: f64 = 1e-9;

/// Cost between rooms `i` and `j` of a `rows x cols` grid, indexed row-major.
pub fn ground_cost(metric: GroundMetric, cols: usize, i: usize, j: usize) -> f64 {
    match metric {
        GroundMetric::Manhattan => {
            let (ri, ci) = (i / cols, i % cols);
            let (rj, cj) = (j / cols, j % cols);
            (ri.abs_diff(rj) + ci.abs_diff(cj)) as f64
        }
        GroundMetric::Index => i.abs_diff(j) as f64,
        GroundMetric::Uniform => f64::from(u8::from(i != j)),
    }
}

/// Full cost matrix for `n` rooms laid out with `cols` columns.
pub fn cost_matrix(metric: GroundMetric, n: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| ground_cost(metric, cols.max(1), i, j)).collect()).collect()
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

struct Flow {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0, cost: -cost });
    }

    /// Bellman-Ford over the residual graph. Returns the edge used to enter
    /// each node on a shortest path from `s`.
    fn shortest(&self, s: usize) -> Vec<Option<usize>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![None; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let ed = &self.edges[e];
                    if ed.cap > MASS_EPS && dist[u] + ed.cost < dist[ed.to] - 1e-12 {
                        dist[ed.to] = dist[u] + ed.cost;
                        via[ed.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        via
    }
}

fn check(p: &[f64], name: &str) -> Result<f64, EvalError> {
    if p.is_empty() {
        return Err(EvalError::Invalid(format!("{name} is empty")));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(EvalError::Invalid(format!("{name} holds a bad mass {x}")));
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(EvalError::Invalid(format!("{name} has no mass")));
    }
    Ok(total)
}

/// Optimal transport cost between `p` and `q` under `cost`, where
/// `cost[i][j]` moves a unit of mass from point `i` of `p` to point `j` of `q`.
/// Both distributions must carry the same total mass.
pub fn wasserstein_exact(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> Result<f64, EvalError> {
    let (mp, mq) = (check(p, "p")?, check(q, "q")?);
    if (mp - mq).abs() > MASS_TOL * mp.max(1.0) {
        return Err(EvalError::Invalid(format!("total masses differ: {mp} vs {mq}")));
    }
    let (n, m) = (p.len(), q.len());
    if cost.len() != n || cost.iter().any(|row| row.len() != m) {
        return Err(EvalError::Invalid(format!("cost matrix is not {n}x{m}")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(EvalError::Invalid("cost matrix holds a non-finite entry".into()));
    }

    let (src, sink) = (0, n + m + 1);
    let mut g = Flow::new(n + m + 2);
    for (i, &pi) in p.iter().enumerate() {
        g.add(src, 1 + i, pi, 0.0);
    }
    for (j, &qj) in q.iter().enumerate() {
        g.add(1 + n + j, sink, qj, 0.0);
    }
    for i in 0..n {
        for j in 0..m {
            g.add(1 + i, 1 + n + j, f64::INFINITY, cost[i][j]);
        }
    }

    let mut total = 0.0;
    loop {
        let via = g.shortest(src);
        if via[sink].is_none() {
            break;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != src {
            let e = via[v].expect("path back to the source");
            path.push(e);
            v = g.edges[e ^ 1].to;
        }
        let push = path.iter().map(|&e| g.edges[e].cap).fold(f64::INFINITY, f64::min);
        for &e in &path {
            g.edges[e].cap -= push;
            g.edges[e ^ 1].cap += push;
            total += push * g.edges[e].cost;
        }
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_masses() {
        let c = cost_matrix(GroundMetric::Manhattan, 4, 2);
        let w = wasserstein_exact(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], &c).unwrap();
        assert_eq!(w, 2.0);
    }

    #[test]
    fn line_matches_cdf_formula() {
        let p = [0.1, 0.4, 0.2, 0.3];
        let q = [0.25, 0.25, 0.25, 0.25];
        let c = cost_matrix(GroundMetric::Index, 4, 4);
        let mut cdf = 0.0;
        let mut expect = 0.0;
        for i in 0..3 {
            cdf += p[i] - q[i];
            expect += f64::abs(cdf);
        }
        let w = wasserstein_exact(&p, &q, &c).unwrap();
        assert!((w - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_unequal_mass() {
        let c = cost_matrix(GroundMetric::Uniform, 2, 2);
        assert!(wasserstein_exact(&[1.0, 0.0], &[0.3, 0.3], &c).is_err());
        assert!(wasserstein_exact(&[-1.0, 2.0], &[0.5, 0.5], &c).is_err());
    }
}
