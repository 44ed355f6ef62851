use super::NumericError;

/// Disjoint union of one or more attributed graphs, ready for message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    node_dim: usize,
    edge_dim: usize,
    node_features: Vec<f64>,
    edges: Vec<(usize, usize)>,
    edge_attrs: Vec<f64>,
    membership: Vec<usize>,
    num_graphs: usize,
}

impl GraphBatch {
    pub fn new(
        node_dim: usize,
        edge_dim: usize,
        node_features: Vec<f64>,
        edges: Vec<(usize, usize)>,
        edge_attrs: Vec<f64>,
        membership: Vec<usize>,
    ) -> Result<Self, NumericError> {
        let num_graphs = membership.iter().max().map_or(0, |m| m + 1);
        let batch = Self {
            node_dim,
            edge_dim,
            node_features,
            edges,
            edge_attrs,
            membership,
            num_graphs,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Single graph: every node belongs to graph 0.
    pub fn single(
        node_dim: usize,
        edge_dim: usize,
        node_features: Vec<f64>,
        edges: Vec<(usize, usize)>,
        edge_attrs: Vec<f64>,
    ) -> Result<Self, NumericError> {
        let n = if node_dim == 0 { 0 } else { node_features.len() / node_dim };
        Self::new(node_dim, edge_dim, node_features, edges, edge_attrs, vec![0; n])
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        let bad = |m: String| Err(NumericError::InvalidGraph(m));
        if self.node_dim == 0 || self.membership.is_empty() {
            return bad("graph has no nodes".into());
        }
        if self.node_features.len() != self.membership.len() * self.node_dim {
            return bad(format!(
                "{} node features for {} nodes of width {}",
                self.node_features.len(),
                self.membership.len(),
                self.node_dim
            ));
        }
        if self.edge_attrs.len() != self.edges.len() * self.edge_dim {
            return bad(format!("{} edge attributes for {} edges", self.edge_attrs.len(), self.edges.len()));
        }
        let n = self.membership.len();
        if let Some(e) = self.edges.iter().find(|(s, t)| *s >= n || *t >= n) {
            return bad(format!("edge {e:?} out of range for {n} nodes"));
        }
        if let Some(e) = self.edges.iter().find(|(s, t)| self.membership[*s] != self.membership[*t]) {
            return bad(format!("edge {e:?} crosses graphs"));
        }
        Ok(())
    }

    /// Concatenates graphs into one batch, offsetting node indices.
    pub fn concat(parts: &[&GraphBatch]) -> Result<Self, NumericError> {
        let first = parts.first().ok_or(NumericError::Empty("graph concat"))?;
        let mut out = GraphBatch {
            node_dim: first.node_dim,
            edge_dim: first.edge_dim,
            node_features: Vec::new(),
            edges: Vec::new(),
            edge_attrs: Vec::new(),
            membership: Vec::new(),
            num_graphs: 0,
        };
        for p in parts {
            if p.node_dim != out.node_dim || p.edge_dim != out.edge_dim {
                return Err(NumericError::ShapeMismatch {
                    op: "graph concat",
                    left: vec![out.node_dim, out.edge_dim],
                    right: vec![p.node_dim, p.edge_dim],
                });
            }
            let offset = out.membership.len();
            out.node_features.extend_from_slice(&p.node_features);
            out.edges.extend(p.edges.iter().map(|(s, t)| (s + offset, t + offset)));
            out.edge_attrs.extend_from_slice(&p.edge_attrs);
            out.membership.extend(p.membership.iter().map(|m| m + out.num_graphs));
            out.num_graphs += p.num_graphs;
        }
        Ok(out)
    }

    pub fn num_nodes(&self) -> usize {
        self.membership.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.num_graphs
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn node_features(&self) -> &[f64] {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_attrs(&self) -> &[f64] {
        &self.edge_attrs
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, NumericError> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericError::InvalidGraph("not a permutation".into()));
        }
        let d = self.node_dim;
        let mut features = vec![0.0; self.node_features.len()];
        let mut membership = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            features[new * d..(new + 1) * d].copy_from_slice(&self.node_features[old * d..(old + 1) * d]);
            membership[new] = self.membership[old];
        }
        let edges = self.edges.iter().map(|&(s, t)| (perm[s], perm[t])).collect();
        Ok(Self {
            node_features: features,
            edges,
            membership,
            ..self.clone()
        })
    }
}
