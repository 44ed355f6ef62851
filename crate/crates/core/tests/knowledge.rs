use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kix::env::{Layout, WorldState};
use kix::knowledge::{
    action_mask, activate, clear_activation, recommend, InstanceGraph, MetaAction, RecommendConfig, SelectMode, TypeGraph, AGENT_NODE,
};
use kix::nets::{PolicyRepository, Variant};

fn worlds() -> impl Iterator<Item = WorldState> {
    [Layout::mini(), Layout::default()]
        .into_iter()
        .flat_map(|l| (0..24u64).map(move |s| WorldState::generate(s, (s % 4) as u8, l).unwrap()))
}

#[test]
fn recommendations_are_feasible_goals() {
    let repo = PolicyRepository::new(Variant::Kix1, 11).unwrap();
    let meta = repo.meta().unwrap();
    let cfg = RecommendConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seen = 0;
    for w in worlds() {
        let gi = InstanceGraph::from_observation(&w.observe(), w.inventory());
        let gk = TypeGraph::from_instance(&gi).unwrap();
        let Ok(r) = recommend(&gi, &gk, meta, SelectMode::Sample, &cfg, &mut rng) else {
            continue;
        };
        seen += 1;
        let node = &gi.nodes()[r.target];
        let held = gi.nodes().iter().find(|n| n.carried);
        assert_ne!(r.target, AGENT_NODE);
        assert!(r.action.compatible(node, held), "{:?} on {:?}", r.action, node.kind);
        assert_eq!(r.mask, action_mask(node, held, true));
        assert!(r.log_prob <= 1e-12 && r.log_prob.is_finite());
        assert_eq!(r.object, node.object);
        assert!(node.view_pos.is_some() || node.carried);
        assert_eq!(r.type_graph.binding().map(|b| b.instance_node), Some(r.target));
        assert_eq!(gi.activated(), None, "input graph untouched");
    }
    assert!(seen > 30, "only {seen} worlds had a candidate");
}

#[test]
fn unmasked_recommender_allows_every_action() {
    let repo = PolicyRepository::new(Variant::Kix2, 3).unwrap();
    let cfg = RecommendConfig { mask_incompatible: false, ..RecommendConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut actions = std::collections::BTreeSet::new();
    for w in worlds() {
        let gi = InstanceGraph::from_observation(&w.observe(), w.inventory());
        let gk = TypeGraph::from_instance(&gi).unwrap();
        if let Ok(r) = recommend(&gi, &gk, repo.meta().unwrap(), SelectMode::Sample, &cfg, &mut rng) {
            assert_eq!(r.mask, [true; MetaAction::COUNT]);
            actions.insert(r.action.index());
        }
    }
    assert!(actions.len() > 2, "sampling without a mask should spread over actions: {actions:?}");
}

#[test]
fn activation_round_trips() {
    for w in worlds() {
        let gi = InstanceGraph::from_observation(&w.observe(), w.inventory());
        let gk = TypeGraph::from_instance(&gi).unwrap();
        for target in 1..gi.nodes().len() {
            let (gi2, gk2) = activate(&gi, &gk, target).unwrap();
            assert_eq!(gi2.activated(), Some(target));
            assert_eq!(gk2.num_edges(), gk.num_edges() + 1);
            assert!(activate(&gi2, &gk2, target).is_err(), "second activation must fail");
            let (gi3, gk3) = clear_activation(&gi2, &gk2);
            assert_eq!(gi3.canonical(), gi.canonical());
            assert_eq!(gk3.canonical(), gk.canonical());
        }
        assert!(activate(&gi, &gk, AGENT_NODE).is_err());
    }
}

#[test]
fn type_graph_encoding_decodes_back() {
    for w in worlds() {
        let gi = InstanceGraph::from_observation(&w.observe(), w.inventory());
        let gk = TypeGraph::from_instance(&gi).unwrap();
        let mut want: Vec<_> = gk.edges().copied().collect();
        let mut got = TypeGraph::decode_edges(&gk.encode()).unwrap();
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }
}
