//! Synthetic failure networks and small fixtures for tests, benchmarks and
//! demos.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::detect_inconsistencies;
use crate::inference::{Evidence, FailureState};
use crate::network::{CauseEffectEdge, FailureNetwork, FailureNode};
use crate::noisy_or::{marginal_actives, CompiledNetwork, GateSpec, NodeKind};
use crate::occurrence::OccurrenceClass;
use crate::params::ParameterVector;

fn node(id: String, step: usize, class: u8) -> FailureNode {
    FailureNode {
        name: format!("failure {id}"),
        id,
        process_step: format!("step-{step:02}"),
        occurrence_class: OccurrenceClass::new(class.into()).unwrap(),
        severity: None,
        detection_hint: None,
    }
}

fn edge(nodes: &[FailureNode], cause: usize, effect: usize, trigger: f64) -> CauseEffectEdge {
    CauseEffectEdge {
        cause_id: nodes[cause].id.clone(),
        effect_id: nodes[effect].id.clone(),
        trigger_probability: trigger,
    }
}

fn build(nodes: Vec<FailureNode>, edges: Vec<CauseEffectEdge>) -> FailureNetwork {
    FailureNetwork::new(nodes, edges, Default::default())
        .expect("generator produces valid networks")
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("F{i:03}")).collect()
}

/// Random polytree (no undirected cycles), so the parents of every node are
/// independent, with continuous random priors and triggers.
pub fn random_polytree(rng: &mut impl Rng, n: usize) -> (FailureNetwork, ParameterVector) {
    let mut component: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], mut i: usize) -> usize {
        while c[i] != i {
            c[i] = c[c[i]];
            i = c[i];
        }
        i
    }
    let nodes: Vec<FailureNode> = ids(n).into_iter().map(|id| node(id, 0, 5)).collect();
    let mut pairs = Vec::new();
    for _ in 0..n * 2 {
        let j = rng.random_range(1..n.max(2)).min(n - 1);
        if j == 0 {
            break;
        }
        let i = rng.random_range(0..j);
        let (ri, rj) = (find(&mut component, i), find(&mut component, j));
        if ri != rj {
            component[ri] = rj;
            pairs.push((i, j));
        }
    }
    let edges: Vec<CauseEffectEdge> = pairs
        .iter()
        .map(|&(i, j)| edge(&nodes, i, j, rng.random_range(0.0..=1.0)))
        .collect();
    let params = ParameterVector {
        priors: (0..n).map(|_| rng.random_range(0.01..0.9)).collect(),
        triggers: edges.iter().map(|e| e.trigger_probability).collect(),
    };
    (build(nodes, edges), params)
}

/// Random DAG over `n` nodes; each node draws up to `max_parents` parents
/// among its predecessors. Priors and triggers are continuous.
pub fn random_dag(
    rng: &mut impl Rng,
    n: usize,
    max_parents: usize,
) -> (FailureNetwork, ParameterVector) {
    let nodes: Vec<FailureNode> = ids(n).into_iter().map(|id| node(id, 0, 5)).collect();
    let mut edges = Vec::new();
    for j in 1..n {
        let k = rng.random_range(0..=max_parents.min(j));
        let mut candidates: Vec<usize> = (0..j).collect();
        candidates.shuffle(rng);
        for &i in &candidates[..k] {
            edges.push(edge(&nodes, i, j, rng.random_range(0.05..0.95)));
        }
    }
    let params = ParameterVector {
        priors: (0..n).map(|_| rng.random_range(0.02..0.6)).collect(),
        triggers: edges.iter().map(|e| e.trigger_probability).collect(),
    };
    (build(nodes, edges), params)
}

/// Evidence on up to `max_observed` random failures, states drawn uniformly.
pub fn random_evidence(
    rng: &mut impl Rng,
    network: &FailureNetwork,
    max_observed: usize,
) -> Evidence {
    let mut order: Vec<usize> = (0..network.len()).collect();
    order.shuffle(rng);
    let k = rng.random_range(0..=max_observed.min(network.len()));
    let mut ev = Evidence::new();
    for &i in &order[..k] {
        let state = if rng.random::<bool>() {
            FailureState::Occurred
        } else {
            FailureState::Absent
        };
        ev.set(network.node(i).id.clone(), state);
    }
    ev
}

/// A network whose expert parameters contain a known set of inconsistencies.
#[derive(Debug, Clone)]
pub struct SeededNetwork {
    pub network: FailureNetwork,
    pub expert: ParameterVector,
    /// Failures made inconsistent, in topological order.
    pub injected: Vec<String>,
}

/// Smallest class whose representative prior is at least `p`.
fn class_at_least(p: f64) -> Option<u8> {
    OccurrenceClass::all()
        .find(|c| c.representative_prior() >= p)
        .map(OccurrenceClass::get)
}

/// Largest class whose representative prior is below `p`.
fn class_below(p: f64) -> Option<u8> {
    OccurrenceClass::all()
        .filter(|c| c.representative_prior() < p)
        .last()
        .map(OccurrenceClass::get)
}

/// Random network with `n_nodes` failures and `n_edges` CERs whose
/// class-derived expert vector has exactly `n_inconsistent` over-explained
/// failures.
pub fn seeded_inconsistent(
    seed: u64,
    n_nodes: usize,
    n_edges: usize,
    n_inconsistent: usize,
) -> SeededNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(s) = try_seeded(&mut rng, n_nodes, n_edges, n_inconsistent) {
            return s;
        }
    }
}

fn try_seeded(
    rng: &mut ChaCha8Rng,
    n_nodes: usize,
    n_edges: usize,
    n_inconsistent: usize,
) -> Option<SeededNetwork> {
    let first_child = (n_nodes / 5).max(1);
    let mut pairs = BTreeSet::new();
    let max_pairs: usize = (first_child..n_nodes).sum();
    if n_edges > max_pairs {
        return None;
    }
    while pairs.len() < n_edges {
        let j = rng.random_range(first_child..n_nodes);
        pairs.insert((rng.random_range(0..j), j));
    }
    let steps = 5;
    let mut nodes: Vec<FailureNode> = ids(n_nodes)
        .into_iter()
        .enumerate()
        .map(|(i, id)| node(id, i * steps / n_nodes, rng.random_range(3..=10)))
        .collect();
    let mut edges: Vec<CauseEffectEdge> = pairs
        .iter()
        .map(|&(i, j)| edge(&nodes, i, j, rng.random_range(0.05..0.6)))
        .collect();
    let mut net = build(nodes.clone(), edges.clone());

    // make every failure consistent, in topological order
    for &i in net.topological_order().to_vec().iter() {
        if net.is_root(i) {
            continue;
        }
        loop {
            let expert = ParameterVector::expert(&net);
            let m = marginal_actives(&net, &expert).unwrap();
            let class =
                class_at_least(m.pre_leak[i] * 1.2).map(|c| (c + rng.random_range(0..=1)).min(10));
            match class {
                Some(c)
                    if OccurrenceClass::new(c.into())
                        .unwrap()
                        .representative_prior()
                        >= m.pre_leak[i] =>
                {
                    nodes[i].occurrence_class = OccurrenceClass::new(c.into()).unwrap();
                    net = build(nodes.clone(), edges.clone());
                    break;
                }
                _ => {
                    for &e in net.incoming(i) {
                        edges[e].trigger_probability *= 0.5;
                    }
                    net = build(nodes.clone(), edges.clone());
                }
            }
        }
    }

    let expert = ParameterVector::expert(&net);
    let m = marginal_actives(&net, &expert).unwrap();
    let mut candidates: Vec<usize> = (0..n_nodes)
        .filter(|&i| !net.is_root(i) && class_below(m.pre_leak[i]).is_some())
        .collect();
    if candidates.len() < n_inconsistent {
        return None;
    }
    candidates.shuffle(rng);
    let mut chosen = candidates[..n_inconsistent].to_vec();
    let topo_pos: Vec<usize> = {
        let mut pos = vec![0; n_nodes];
        for (k, &i) in net.topological_order().iter().enumerate() {
            pos[i] = k;
        }
        pos
    };
    chosen.sort_by_key(|&i| topo_pos[i]);
    for &i in &chosen {
        let expert = ParameterVector::expert(&net);
        let m = marginal_actives(&net, &expert).unwrap();
        let c = class_below(m.pre_leak[i])?;
        nodes[i].occurrence_class = OccurrenceClass::new(c.into()).unwrap();
        net = build(nodes.clone(), edges.clone());
    }

    let expert = ParameterVector::expert(&net);
    let report = detect_inconsistencies(&net, &expert).unwrap();
    let injected: Vec<String> = chosen.iter().map(|&i| net.node(i).id.clone()).collect();
    let flagged: BTreeSet<&str> = report.ids().collect();
    if flagged != injected.iter().map(String::as_str).collect() {
        return None;
    }
    Some(SeededNetwork {
        network: net,
        expert,
        injected,
    })
}

/// Shape targets for [`production_scale`].
#[derive(Debug, Clone, Copy)]
pub struct ScaleProfile {
    pub failures: usize,
    pub edges: usize,
    pub roots: usize,
    pub max_fan_in: usize,
    pub process_steps: usize,
    pub cross_step_fraction: f64,
}

impl Default for ScaleProfile {
    fn default() -> Self {
        ScaleProfile {
            failures: 432,
            edges: 1098,
            roots: 219,
            max_fan_in: 32,
            process_steps: 12,
            cross_step_fraction: 0.37,
        }
    }
}

/// A production-sized failure network: process steps in chronological order,
/// causes drawn from earlier failures of the same or an earlier step.
pub fn production_scale(seed: u64, profile: ScaleProfile) -> FailureNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = profile.failures;
    let per_step = n.div_ceil(profile.process_steps);
    let step_of = |i: usize| i / per_step;

    // within each step the roots come first
    let mut is_root = vec![false; n];
    let mut remaining = profile.roots;
    for s in 0..profile.process_steps {
        let start = s * per_step;
        let end = ((s + 1) * per_step).min(n);
        let steps_left = profile.process_steps - s;
        let k = remaining.div_ceil(steps_left).min(end - start);
        for r in is_root.iter_mut().take(start + k).skip(start) {
            *r = true;
        }
        remaining -= k;
    }
    // the first failure is always a root
    is_root[0] = true;
    let children: Vec<usize> = (0..n).filter(|&i| !is_root[i]).collect();

    // fan-in: the last child takes the maximum, every other child at least one
    let hub = *children.last().unwrap();
    let mut fan_in = vec![0usize; n];
    for &c in &children {
        fan_in[c] = 1;
    }
    fan_in[hub] = profile.max_fan_in;
    let mut extra = profile.edges - (children.len() - 1) - profile.max_fan_in;
    while extra > 0 {
        let c = children[rng.random_range(0..children.len() - 1)];
        if fan_in[c] < profile.max_fan_in - 1 && fan_in[c] < c {
            fan_in[c] += 1;
            extra -= 1;
        }
    }

    let nodes: Vec<FailureNode> = ids(n)
        .into_iter()
        .enumerate()
        .map(|(i, id)| node(id, step_of(i), rng.random_range(1..=10)))
        .collect();
    let mut edges = Vec::with_capacity(profile.edges);
    for &c in &children {
        let step_start = step_of(c) * per_step;
        let mut same: Vec<usize> = (step_start..c).collect();
        let mut cross: Vec<usize> = (0..step_start).collect();
        same.shuffle(&mut rng);
        cross.shuffle(&mut rng);
        for _ in 0..fan_in[c] {
            let want_cross = rng.random::<f64>() < profile.cross_step_fraction;
            let parent = match (want_cross, cross.is_empty(), same.is_empty()) {
                (true, false, _) | (_, false, true) => cross.pop(),
                _ => same.pop(),
            }
            .expect("enough earlier failures");
            edges.push(edge(&nodes, parent, c, rng.random_range(0.01..0.5)));
        }
    }
    build(nodes, edges)
}

/// Six-failure network shaped like a small RCA walkthrough: X1 is the
/// observed failure, X2 and X3 its direct causes, X4..X6 root causes.
pub const SIX_NODE_JSON: &str = r#"{
  "nodes": [
    {"id": "X1", "name": "Leak rate too high", "process_step": "test", "occurrence_class": 10},
    {"id": "X2", "name": "Weld seam leaky", "process_step": "welding", "occurrence_class": 10},
    {"id": "X3", "name": "Cover leaky", "process_step": "assembly", "occurrence_class": 10},
    {"id": "X4", "name": "Cover deformed", "process_step": "assembly", "occurrence_class": 9},
    {"id": "X5", "name": "Seal missing", "process_step": "assembly", "occurrence_class": 8},
    {"id": "X6", "name": "Weld seam burnt", "process_step": "welding", "occurrence_class": 10}
  ],
  "edges": [
    {"cause": "X2", "effect": "X1", "trigger_probability": 0.4},
    {"cause": "X3", "effect": "X1", "trigger_probability": 0.5},
    {"cause": "X4", "effect": "X3", "trigger_probability": 0.5},
    {"cause": "X5", "effect": "X3", "trigger_probability": 0.8},
    {"cause": "X6", "effect": "X2", "trigger_probability": 0.9},
    {"cause": "X5", "effect": "X2", "trigger_probability": 0.2}
  ]
}"#;

pub fn six_node_network() -> FailureNetwork {
    crate::network::parse_network(SIX_NODE_JSON).expect("fixture is valid")
}

/// Two independent causes A and C (prior 0.5) of B, trigger 0.4 each, with
/// B's leak fixed at zero.
pub fn collider() -> CompiledNetwork {
    CompiledNetwork::from_gates(
        vec![
            GateSpec::root("A", NodeKind::Failure, 0.5),
            GateSpec::root("C", NodeKind::Failure, 0.5),
            GateSpec::root("B#leak", NodeKind::Leak, 0.0),
            GateSpec::child(
                "B",
                NodeKind::Failure,
                vec![("A".into(), 0.4), ("C".into(), 0.4), ("B#leak".into(), 1.0)],
            ),
        ],
        crate::noisy_or::DEFAULT_MAX_GROUP_SIZE,
    )
    .expect("fixture is valid")
}

/// The collider as a failure network; with A, C at 0.5 and B at 0.36 the
/// solved leak is zero.
pub const COLLIDER_JSON: &str = r#"{
  "nodes": [
    {"id": "A", "name": "cause a", "process_step": "s1", "occurrence_class": 10},
    {"id": "C", "name": "cause c", "process_step": "s1", "occurrence_class": 10},
    {"id": "B", "name": "effect b", "process_step": "s2", "occurrence_class": 10}
  ],
  "edges": [
    {"cause": "A", "effect": "B", "trigger_probability": 0.4},
    {"cause": "C", "effect": "B", "trigger_probability": 0.4}
  ]
}"#;
