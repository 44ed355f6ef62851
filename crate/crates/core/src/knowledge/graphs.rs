use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::env::{codes, Carryable, Color, DoorState, ObjectId, ObjectKind, Observation, FRONT_VIEW, VIEW};
use crate::numeric::GraphBatch;

use super::KnowledgeError;

/// Entity types of the type-space graph, in node order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Agent,
    Door,
    Key,
    Ball,
    GoalBall,
    Box,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Agent,
        EntityType::Door,
        EntityType::Key,
        EntityType::Ball,
        EntityType::GoalBall,
        EntityType::Box,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Agent => "agent",
            EntityType::Door => "door",
            EntityType::Key => "key",
            EntityType::Ball => "ball",
            EntityType::GoalBall => "goal-ball",
            EntityType::Box => "box",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Visible,
    Adjacent,
    Carrying,
    Activated,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Visible, Relation::Adjacent, Relation::Carrying, Relation::Activated];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Visible => "visible",
            Relation::Adjacent => "adjacent",
            Relation::Carrying => "carrying",
            Relation::Activated => "activated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Agent,
    Object(ObjectKind),
    /// Observation type code the recognition layer has no entity for.
    Unrecognized(u8),
}

/// Node of an instance graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceNode {
    pub kind: NodeKind,
    pub object: Option<ObjectId>,
    pub color: Option<Color>,
    /// Door state code (0 open, 1 closed, 2 locked); 0 for other objects.
    pub state: u8,
    /// `(col, row)` in the egocentric view; `None` for the agent and carried objects.
    pub view_pos: Option<(usize, usize)>,
    pub carried: bool,
}

impl InstanceNode {
    fn agent() -> Self {
        Self {
            kind: NodeKind::Agent,
            object: None,
            color: None,
            state: 0,
            view_pos: None,
            carried: false,
        }
    }

    pub fn door_state(&self) -> Option<DoorState> {
        match (self.kind, self.state) {
            (NodeKind::Object(ObjectKind::Door), 0) => Some(DoorState::Open),
            (NodeKind::Object(ObjectKind::Door), 1) => Some(DoorState::Closed),
            (NodeKind::Object(ObjectKind::Door), _) => Some(DoorState::Locked),
            _ => None,
        }
    }

    /// Type-space node this instance maps to; blue balls are the goal type.
    pub fn entity_type(&self) -> Result<EntityType, KnowledgeError> {
        Ok(match self.kind {
            NodeKind::Agent => EntityType::Agent,
            NodeKind::Object(ObjectKind::Door) => EntityType::Door,
            NodeKind::Object(ObjectKind::Key) => EntityType::Key,
            NodeKind::Object(ObjectKind::Ball) if self.color == Some(Color::Blue) => EntityType::GoalBall,
            NodeKind::Object(ObjectKind::Ball) => EntityType::Ball,
            NodeKind::Object(ObjectKind::Box) => EntityType::Box,
            NodeKind::Unrecognized(code) => return Err(KnowledgeError::UnknownType(code)),
        })
    }
}

/// Graph of the agent and the objects it currently perceives. Node 0 is the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceGraph {
    nodes: Vec<InstanceNode>,
    edges: Vec<(usize, usize, Relation)>,
}

pub const AGENT_NODE: usize = 0;

fn kind_from_code(code: u8) -> Option<NodeKind> {
    match code {
        codes::UNSEEN | codes::EMPTY | codes::WALL => None,
        codes::DOOR => Some(NodeKind::Object(ObjectKind::Door)),
        codes::KEY => Some(NodeKind::Object(ObjectKind::Key)),
        codes::BALL => Some(NodeKind::Object(ObjectKind::Ball)),
        codes::BOX => Some(NodeKind::Object(ObjectKind::Box)),
        other => Some(NodeKind::Unrecognized(other)),
    }
}

impl InstanceGraph {
    /// Builds the instance graph from a partial view and the carried object.
    pub fn from_observation(obs: &Observation, inventory: Option<Carryable>) -> Self {
        let mut nodes = vec![InstanceNode::agent()];
        let mut at = vec![None; VIEW * VIEW];
        for row in 0..VIEW {
            for col in 0..VIEW {
                let i = Observation::index(col, row);
                if !obs.visible[i] {
                    continue;
                }
                let [t, c, s] = obs.cells[i];
                let Some(kind) = kind_from_code(t) else { continue };
                at[i] = Some(nodes.len());
                nodes.push(InstanceNode {
                    kind,
                    object: obs.ids[i],
                    color: Color::ALL.get(c as usize).copied(),
                    state: s,
                    view_pos: Some((col, row)),
                    carried: false,
                });
            }
        }
        let mut edges = Vec::new();
        for n in 1..nodes.len() {
            edges.push((AGENT_NODE, n, Relation::Visible));
        }
        for row in 0..VIEW {
            for col in 0..VIEW {
                let Some(a) = at[Observation::index(col, row)] else { continue };
                if col + 1 < VIEW {
                    if let Some(b) = at[Observation::index(col + 1, row)] {
                        edges.push((a, b, Relation::Adjacent));
                        edges.push((b, a, Relation::Adjacent));
                    }
                }
                if row + 1 < VIEW {
                    if let Some(b) = at[Observation::index(col, row + 1)] {
                        edges.push((a, b, Relation::Adjacent));
                        edges.push((b, a, Relation::Adjacent));
                    }
                }
            }
        }
        if let Some(front) = at[Observation::index(FRONT_VIEW.0, FRONT_VIEW.1)] {
            edges.push((AGENT_NODE, front, Relation::Adjacent));
        }
        if let Some(k) = inventory {
            let n = nodes.len();
            nodes.push(InstanceNode {
                kind: NodeKind::Object(k.kind()),
                object: Some(k.id()),
                color: Some(k.color()),
                state: 0,
                view_pos: None,
                carried: true,
            });
            edges.push((AGENT_NODE, n, Relation::Carrying));
        }
        edges.sort();
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[InstanceNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, Relation)] {
        &self.edges
    }

    pub fn num_objects(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn activated(&self) -> Option<usize> {
        self.edges.iter().find(|e| e.2 == Relation::Activated).map(|e| e.1)
    }

    pub fn find_object(&self, id: ObjectId) -> Option<usize> {
        self.nodes.iter().position(|n| n.object == Some(id))
    }

    pub(crate) fn push_edge(&mut self, e: (usize, usize, Relation)) {
        self.edges.push(e);
        self.edges.sort();
    }

    pub(crate) fn remove_activation(&mut self) {
        self.edges.retain(|e| e.2 != Relation::Activated);
    }

    /// Canonical text form: nodes in index order, edges sorted.
    pub fn canonical(&self) -> String {
        let mut s = String::from("instance-graph\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let kind = match n.kind {
                NodeKind::Agent => "agent".to_string(),
                NodeKind::Object(k) => format!("{k:?}").to_lowercase(),
                NodeKind::Unrecognized(c) => format!("unrecognized({c})"),
            };
            let _ = write!(s, "node {i} {kind}");
            if let Some(c) = n.color.filter(|_| n.kind != NodeKind::Agent) {
                let _ = write!(s, " {}", c.name());
            }
            if let Some(d) = n.door_state() {
                let _ = write!(s, " {}", format!("{d:?}").to_lowercase());
            }
            if let Some((c, r)) = n.view_pos {
                let _ = write!(s, " at {c},{r}");
            }
            if n.carried {
                s.push_str(" carried");
            }
            if let Some(id) = n.object {
                let _ = write!(s, " {id}");
            }
            s.push('\n');
        }
        for (a, b, r) in &self.edges {
            let _ = writeln!(s, "edge {a} -> {b} {}", r.name());
        }
        s
    }
}

/// Attributes of the concrete object bound to the activated type node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub instance_node: usize,
    pub object: Option<ObjectId>,
    pub entity: EntityType,
    pub color: Option<Color>,
    pub state: u8,
}

/// Type-space graph over the fixed entity vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TypeGraph {
    edges: BTreeSet<(EntityType, EntityType, Relation)>,
    binding: Option<Binding>,
}

pub const NODE_FEATURES: usize = EntityType::COUNT + 6 + 3;
pub const EDGE_FEATURES: usize = Relation::COUNT;

impl TypeGraph {
    /// Collapses an instance graph onto entity types, deduplicating edges.
    pub fn from_instance(gi: &InstanceGraph) -> Result<Self, KnowledgeError> {
        let types = gi.nodes.iter().map(InstanceNode::entity_type).collect::<Result<Vec<_>, _>>()?;
        let mut edges = BTreeSet::new();
        let mut binding = None;
        for &(a, b, r) in &gi.edges {
            edges.insert((types[a], types[b], r));
            if r == Relation::Activated {
                let n = &gi.nodes[b];
                binding = Some(Binding {
                    instance_node: b,
                    object: n.object,
                    entity: types[b],
                    color: n.color,
                    state: n.state,
                });
            }
        }
        Ok(Self { edges, binding })
    }

    pub fn edges(&self) -> impl Iterator<Item = &(EntityType, EntityType, Relation)> {
        self.edges.iter()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn binding(&self) -> Option<&Binding> {
        self.binding.as_ref()
    }

    pub fn activated_type(&self) -> Option<EntityType> {
        self.edges.iter().find(|e| e.2 == Relation::Activated).map(|e| e.1)
    }

    pub(crate) fn insert_activation(&mut self, binding: Binding) {
        self.edges.insert((EntityType::Agent, binding.entity, Relation::Activated));
        self.binding = Some(binding);
    }

    pub(crate) fn remove_activation(&mut self) {
        self.edges.retain(|e| e.2 != Relation::Activated);
        self.binding = None;
    }

    /// Tensor encoding: one node per entity type in type order with
    /// `[type one-hot | color one-hot | door-state one-hot]` features (color
    /// and state only on the activated node) and one-hot relation edge
    /// attributes.
    pub fn encode(&self) -> GraphBatch {
        let mut feats = vec![0.0; EntityType::COUNT * NODE_FEATURES];
        for t in EntityType::ALL {
            feats[t.index() * NODE_FEATURES + t.index()] = 1.0;
        }
        if let Some(b) = &self.binding {
            let base = b.entity.index() * NODE_FEATURES;
            if let Some(c) = b.color {
                feats[base + EntityType::COUNT + c.index()] = 1.0;
            }
            if b.entity == EntityType::Door {
                feats[base + EntityType::COUNT + 6 + (b.state as usize).min(2)] = 1.0;
            }
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        let mut attrs = Vec::with_capacity(self.edges.len() * EDGE_FEATURES);
        for (a, b, r) in &self.edges {
            edges.push((a.index(), b.index()));
            let mut one_hot = [0.0; EDGE_FEATURES];
            one_hot[r.index()] = 1.0;
            attrs.extend_from_slice(&one_hot);
        }
        GraphBatch::single(NODE_FEATURES, EDGE_FEATURES, feats, edges, attrs).expect("type graph encoding is well-formed")
    }

    /// Recovers the edge set from an encoding produced by [`TypeGraph::encode`].
    pub fn decode_edges(batch: &GraphBatch) -> Result<Vec<(EntityType, EntityType, Relation)>, KnowledgeError> {
        let mut out = Vec::new();
        for (k, &(a, b)) in batch.edges().iter().enumerate() {
            let attr = &batch.edge_attrs()[k * EDGE_FEATURES..(k + 1) * EDGE_FEATURES];
            let r = attr
                .iter()
                .position(|&v| v == 1.0)
                .ok_or_else(|| KnowledgeError::Malformed(format!("edge {k} has no relation")))?;
            let ta = *EntityType::ALL.get(a).ok_or_else(|| KnowledgeError::Malformed(format!("node {a}")))?;
            let tb = *EntityType::ALL.get(b).ok_or_else(|| KnowledgeError::Malformed(format!("node {b}")))?;
            out.push((ta, tb, Relation::ALL[r]));
        }
        Ok(out)
    }

    pub fn canonical(&self) -> String {
        let mut s = String::from("type-graph\n");
        for t in EntityType::ALL {
            let _ = writeln!(s, "node {}", t.name());
        }
        for (a, b, r) in &self.edges {
            let _ = writeln!(s, "edge {} -> {} {}", a.name(), b.name(), r.name());
        }
        if let Some(b) = &self.binding {
            let _ = write!(s, "binding {} node {}", b.entity.name(), b.instance_node);
            if let Some(c) = b.color {
                let _ = write!(s, " {}", c.name());
            }
            s.push('\n');
        }
        s
    }
}

/// Adds the activation relation for `target` to both graphs.
pub fn activate(gi: &InstanceGraph, gk: &TypeGraph, target: usize) -> Result<(InstanceGraph, TypeGraph), KnowledgeError> {
    if target == AGENT_NODE || target >= gi.nodes.len() {
        return Err(KnowledgeError::BadTarget(target));
    }
    if gi.activated().is_some() || gk.binding.is_some() || gk.activated_type().is_some() {
        return Err(KnowledgeError::AlreadyActivated);
    }
    let node = &gi.nodes[target];
    let entity = node.entity_type()?;
    let mut gi2 = gi.clone();
    gi2.push_edge((AGENT_NODE, target, Relation::Activated));
    let mut gk2 = gk.clone();
    gk2.insert_activation(Binding {
        instance_node: target,
        object: node.object,
        entity,
        color: node.color,
        state: node.state,
    });
    Ok((gi2, gk2))
}

/// Removes any activation relation from both graphs.
pub fn clear_activation(gi: &InstanceGraph, gk: &TypeGraph) -> (InstanceGraph, TypeGraph) {
    let mut gi2 = gi.clone();
    gi2.remove_activation();
    let mut gk2 = gk.clone();
    gk2.remove_activation();
    (gi2, gk2)
}
