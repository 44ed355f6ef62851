use rand::Rng;

use crate::env::{DoorState, ObjectId, ObjectKind};
use crate::numeric::{argmax, categorical_sample, softmax_in_place, GraphBatch};

use super::graphs::{activate, InstanceGraph, InstanceNode, NodeKind, TypeGraph, AGENT_NODE};
use super::KnowledgeError;

/// Interaction primitives the meta policy can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetaAction {
    Pickup,
    Drop,
    Reveal,
    Open,
    OpenWithKey,
}

impl MetaAction {
    pub const COUNT: usize = 5;
    pub const ALL: [MetaAction; 5] = [
        MetaAction::Pickup,
        MetaAction::Drop,
        MetaAction::Reveal,
        MetaAction::Open,
        MetaAction::OpenWithKey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MetaAction::Pickup => "pickup",
            MetaAction::Drop => "drop",
            MetaAction::Reveal => "reveal",
            MetaAction::Open => "open",
            MetaAction::OpenWithKey => "open_with_key",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Whether the interaction can possibly succeed on this object while the
    /// agent holds `held`.
    pub fn compatible(self, node: &InstanceNode, held: Option<&InstanceNode>) -> bool {
        match (self, node.kind) {
            (MetaAction::Pickup, NodeKind::Object(ObjectKind::Key | ObjectKind::Ball)) => !node.carried && held.is_none(),
            (MetaAction::Drop, _) => node.carried,
            (MetaAction::Reveal, NodeKind::Object(ObjectKind::Box)) => true,
            (MetaAction::Open, _) => node.door_state() == Some(DoorState::Closed),
            (MetaAction::OpenWithKey, _) => {
                node.door_state() == Some(DoorState::Locked)
                    && held.is_some_and(|k| k.kind == NodeKind::Object(ObjectKind::Key) && k.color == node.color)
            }
            _ => false,
        }
    }
}

/// Output of the meta policy for one activated type graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaOutput {
    pub value: f64,
    pub logits: [f64; MetaAction::COUNT],
}

/// Anything that can score activated type graphs.
pub trait MetaEvaluator {
    fn evaluate(&self, graphs: &[GraphBatch]) -> Result<Vec<MetaOutput>, KnowledgeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecommendConfig {
    /// Softmax temperature over candidate values when sampling the object.
    pub temperature: f64,
    /// Restrict interactions to those compatible with the chosen object.
    pub mask_incompatible: bool,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            mask_incompatible: true,
        }
    }
}

/// An `(object, interaction)` goal with everything needed to train on it.
#[derive(Debug, Clone)]
pub struct Recommendation {
    pub target: usize,
    pub object: Option<ObjectId>,
    pub action: MetaAction,
    pub log_prob: f64,
    pub value: f64,
    pub mask: [bool; MetaAction::COUNT],
    /// Encoded activated type graph the decision was made from.
    pub state: GraphBatch,
    pub instance: InstanceGraph,
    pub type_graph: TypeGraph,
    /// `(instance node, value)` for every candidate.
    pub candidate_values: Vec<(usize, f64)>,
}

pub fn action_mask(node: &InstanceNode, held: Option<&InstanceNode>, mask_incompatible: bool) -> [bool; MetaAction::COUNT] {
    let mut m = [true; MetaAction::COUNT];
    if mask_incompatible {
        for a in MetaAction::ALL {
            m[a.index()] = a.compatible(node, held);
        }
    }
    m
}

/// Softmax over logits restricted to `mask`.
pub fn masked_probs(logits: &[f64; MetaAction::COUNT], mask: &[bool; MetaAction::COUNT]) -> [f64; MetaAction::COUNT] {
    let mut z: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l } else { f64::NEG_INFINITY })
        .collect();
    softmax_in_place(&mut z);
    let mut out = [0.0; MetaAction::COUNT];
    out.copy_from_slice(&z);
    out
}

/// Scores every perceived object by activating it, picks one by value, then
/// picks an interaction from that object's distribution. The carried object
/// is a candidate only while some object is in view.
pub fn recommend<E: MetaEvaluator + ?Sized, R: Rng + ?Sized>(
    gi: &InstanceGraph,
    gk: &TypeGraph,
    evaluator: &E,
    mode: SelectMode,
    cfg: &RecommendConfig,
    rng: &mut R,
) -> Result<Recommendation, KnowledgeError> {
    let held = gi.nodes().iter().find(|n| n.carried);
    let mut cands = Vec::new();
    for (i, node) in gi.nodes().iter().enumerate() {
        if i == AGENT_NODE {
            continue;
        }
        let mask = action_mask(node, held, cfg.mask_incompatible);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let (gi2, gk2) = activate(gi, gk, i)?;
        let enc = gk2.encode();
        cands.push((i, mask, gi2, gk2, enc));
    }
    // holding something with nothing in view: explore instead of juggling it
    if cands.iter().all(|c| gi.nodes()[c.0].carried) {
        return Err(KnowledgeError::NoCandidates);
    }
    let encoded: Vec<GraphBatch> = cands.iter().map(|c| c.4.clone()).collect();
    let outs = evaluator.evaluate(&encoded)?;
    if outs.len() != cands.len() {
        return Err(KnowledgeError::Malformed(format!(
            "evaluator returned {} outputs for {} graphs",
            outs.len(),
            cands.len()
        )));
    }
    if outs.iter().any(|o| !o.value.is_finite() || o.logits.iter().any(|l| !l.is_finite())) {
        return Err(KnowledgeError::NonFinite);
    }
    let values: Vec<f64> = outs.iter().map(|o| o.value).collect();
    let pick = match mode {
        SelectMode::Greedy => argmax(&values),
        SelectMode::Sample => {
            let mut p: Vec<f64> = values.iter().map(|v| v / cfg.temperature).collect();
            softmax_in_place(&mut p);
            categorical_sample(&p, rng)?.0
        }
    };
    let targets: Vec<usize> = cands.iter().map(|c| c.0).collect();
    let (target, mask, gi2, gk2, state) = cands.swap_remove(pick);
    let out = &outs[pick];
    let probs = masked_probs(&out.logits, &mask);
    let a = match mode {
        SelectMode::Greedy => argmax(&probs),
        SelectMode::Sample => categorical_sample(&probs, rng)?.0,
    };
    let candidate_values = targets.into_iter().zip(values).collect();
    Ok(Recommendation {
        target,
        object: gi.nodes()[target].object,
        action: MetaAction::ALL[a],
        log_prob: probs[a].ln(),
        value: out.value,
        mask,
        state,
        instance: gi2,
        type_graph: gk2,
        candidate_values,
    })
}
