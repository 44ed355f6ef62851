use rand::Rng;

use crate::knowledge::{KnowledgeError, MetaAction, MetaEvaluator, MetaOutput, EDGE_FEATURES, NODE_FEATURES};
use crate::numeric::{Bound, GatVars, GraphBatch, NumericError, ParamSet, Tape, Tensor, Var};

use super::{slot, Head, Outputs, ACTOR_OUT_SCALE};

pub const GAT_HEADS: usize = 4;
pub const GAT_WIDTH: usize = 16;

/// Two GATv2 layers (ELU after each), global add pool, actor and critic heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPolicy {
    params: ParamSet,
    gat: [[usize; 4]; 2],
    actor: Head,
    critic: Head,
}

const GAT_PARTS: [&str; 4] = ["node", "edge", "attention", "bias"];

impl MetaPolicy {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Result<Self, NumericError> {
        let mut ps = ParamSet::new();
        let dim = GAT_WIDTH / GAT_HEADS;
        let mut gat = [[0; 4]; 2];
        for (l, slots) in gat.iter_mut().enumerate() {
            let f_in = if l == 0 { NODE_FEATURES } else { GAT_WIDTH };
            let name = format!("gat{}", l + 1);
            slots[0] = ps.insert_uniform(&format!("{name}.node"), &[f_in, GAT_WIDTH], f_in, rng)?;
            slots[1] = ps.insert_uniform(&format!("{name}.edge"), &[EDGE_FEATURES, GAT_WIDTH], EDGE_FEATURES, rng)?;
            slots[2] = ps.insert_uniform(&format!("{name}.attention"), &[GAT_HEADS, dim], dim, rng)?;
            slots[3] = ps.insert_zeros(&format!("{name}.bias"), &[GAT_WIDTH])?;
        }
        let actor = Head::new(&mut ps, "actor", GAT_WIDTH, MetaAction::COUNT, ACTOR_OUT_SCALE, rng)?;
        let critic = Head::new(&mut ps, "critic", GAT_WIDTH, 1, 1.0, rng)?;
        Ok(Self { params: ps, gat, actor, critic })
    }

    pub fn from_params(params: ParamSet) -> Result<Self, NumericError> {
        let mut gat = [[0; 4]; 2];
        for (l, slots) in gat.iter_mut().enumerate() {
            for (s, part) in slots.iter_mut().zip(GAT_PARTS) {
                *s = slot(&params, &format!("gat{}.{part}", l + 1))?;
            }
        }
        let actor = Head::find(&params, "actor")?;
        let critic = Head::find(&params, "critic")?;
        if params.tensor(actor.w2).shape()[1] != MetaAction::COUNT || params.tensor(gat[0][0]).shape()[0] != NODE_FEATURES {
            return Err(NumericError::InvalidShape(params.tensor(actor.w2).shape().to_vec()));
        }
        Ok(Self { params, gat, actor, critic })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass over a batch of graphs; returns `[G, 5]`
    /// logits and `[G]` values.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, graphs: &GraphBatch) -> Result<(Var, Var), NumericError> {
        if graphs.node_dim() != NODE_FEATURES || graphs.edge_dim() != EDGE_FEATURES {
            return Err(NumericError::ShapeMismatch {
                op: "meta policy input",
                left: vec![graphs.node_dim(), graphs.edge_dim()],
                right: vec![NODE_FEATURES, EDGE_FEATURES],
            });
        }
        let x = tape.leaf(&Tensor::new(&[graphs.num_nodes(), NODE_FEATURES], graphs.node_features().to_vec())?);
        let mut h = x;
        for slots in &self.gat {
            let vars = GatVars {
                node: bound.var(slots[0]),
                edge: bound.var(slots[1]),
                attention: bound.var(slots[2]),
                bias: bound.var(slots[3]),
            };
            h = tape.gatv2(h, graphs, vars, GAT_HEADS)?;
            h = tape.elu(h);
        }
        let pooled = tape.global_add_pool(h, graphs.membership(), graphs.num_graphs())?;
        let logits = self.actor.forward(tape, bound, pooled)?;
        let v = self.critic.forward(tape, bound, pooled)?;
        let values = tape.reshape(v, &[graphs.num_graphs()])?;
        Ok((logits, values))
    }

    pub fn infer(&self, graphs: &[GraphBatch]) -> Result<Outputs, NumericError> {
        let refs: Vec<&GraphBatch> = graphs.iter().collect();
        let batch = GraphBatch::concat(&refs)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (logits, values) = self.forward(&mut tape, &bound, &batch)?;
        Ok(Outputs {
            logits: tape.value(logits).to_vec(),
            values: tape.value(values).to_vec(),
            actions: MetaAction::COUNT,
        })
    }
}

impl MetaEvaluator for MetaPolicy {
    fn evaluate(&self, graphs: &[GraphBatch]) -> Result<Vec<MetaOutput>, KnowledgeError> {
        let out = self.infer(graphs)?;
        Ok((0..out.rows())
            .map(|r| {
                let mut logits = [0.0; MetaAction::COUNT];
                logits.copy_from_slice(out.row(r));
                MetaOutput { value: out.values[r], logits }
            })
            .collect())
    }
}
