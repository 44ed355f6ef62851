//! Instance and type-space knowledge graphs and the recommendation step that
//! turns meta-policy scores into an `(object, interaction)` goal.

mod graphs;
mod recommend;

pub use graphs::{
    activate, clear_activation, Binding, EntityType, InstanceGraph, InstanceNode, NodeKind, Relation, TypeGraph, AGENT_NODE,
    EDGE_FEATURES, NODE_FEATURES,
};
pub use recommend::{
    action_mask, masked_probs, recommend, MetaAction, MetaEvaluator, MetaOutput, Recommendation, RecommendConfig, SelectMode,
};

use crate::numeric::NumericError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("observation type code {0} has no entity type")]
    UnknownType(u8),
    #[error("activation target {0} is not an object node")]
    BadTarget(usize),
    #[error("graph already carries an activation edge")]
    AlreadyActivated,
    #[error("no perceived object admits any interaction")]
    NoCandidates,
    #[error("meta policy produced a non-finite score")]
    NonFinite,
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}
