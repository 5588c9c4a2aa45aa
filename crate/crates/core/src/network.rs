//! The expert-given FMEA failure network: failures, cause-effect edges and
//! per-parameter change costs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::occurrence::OccurrenceClass;

/// Default change cost of an occurrence-class entry.
pub const DEFAULT_PRIOR_COST: f64 = 1.0;
/// Default change cost of a trigger probability entry.
pub const DEFAULT_TRIGGER_COST: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    /// JSON syntax or shape error; `line` and `column` are 1-based.
    #[error("malformed network document: {message}")]
    Schema {
        message: String,
        line: usize,
        column: usize,
    },
    #[error("node {node}: occurrence class {class} is outside 1..=10")]
    InvalidOccurrenceClass { node: String, class: i64 },
    #[error("node {node}: severity {severity} is outside 1..=10")]
    InvalidSeverity { node: String, severity: i64 },
    #[error("edge {cause}->{effect}: trigger probability {value} is outside [0, 1]")]
    TriggerOutOfRange {
        cause: String,
        effect: String,
        value: f64,
    },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate edge {cause}->{effect}")]
    DuplicateEdge { cause: String, effect: String },
    #[error("edge {0}->{0} points at itself")]
    SelfLoop(String),
    #[error("edge {cause}->{effect} references unknown node {missing:?}")]
    DanglingReference {
        cause: String,
        effect: String,
        missing: String,
    },
    #[error("directed cycle through {}", nodes.join(", "))]
    Cycle { nodes: Vec<String> },
    #[error("cost key {0:?} matches no node or edge")]
    UnknownCostKey(String),
    #[error("cost {key:?} must be positive and finite, got {value}")]
    InvalidCost { key: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureNode {
    pub id: String,
    pub name: String,
    pub process_step: String,
    pub occurrence_class: OccurrenceClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_hint: Option<String>,
}

/// A cause-effect relationship (CER) with its Noisy-OR trigger probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauseEffectEdge {
    #[serde(rename = "cause")]
    pub cause_id: String,
    #[serde(rename = "effect")]
    pub effect_id: String,
    pub trigger_probability: f64,
}

impl CauseEffectEdge {
    /// `<cause>-><effect>`, the edge part of a cost key.
    pub fn key(&self) -> String {
        edge_key(&self.cause_id, &self.effect_id)
    }
}

pub fn edge_key(cause: &str, effect: &str) -> String {
    format!("{cause}->{effect}")
}

/// On-disk shape of a network file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    nodes: Vec<RawNode>,
    edges: Vec<CauseEffectEdge>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    costs: BTreeMap<String, f64>,
}

/// Node as written in the file; class and severity are range-checked after
/// parsing so errors can name the node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    name: String,
    process_step: String,
    occurrence_class: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    severity: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detection_hint: Option<String>,
}

/// A validated failure network. Immutable once constructed.
///
/// Node and edge indices follow the order of the input document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDocument", into = "NetworkDocument")]
pub struct FailureNetwork {
    nodes: Vec<FailureNode>,
    edges: Vec<CauseEffectEdge>,
    costs: BTreeMap<String, f64>,
    index: HashMap<String, usize>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl FailureNetwork {
    pub fn new(
        nodes: Vec<FailureNode>,
        edges: Vec<CauseEffectEdge>,
        costs: BTreeMap<String, f64>,
    ) -> Result<Self, NetworkError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if let Some(sev) = node.severity {
                if !(1..=10).contains(&sev) {
                    return Err(NetworkError::InvalidSeverity {
                        node: node.id.clone(),
                        severity: sev as i64,
                    });
                }
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateNode(node.id.clone()));
            }
        }

        let mut incoming = vec![Vec::new(); nodes.len()];
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::with_capacity(edges.len());
        for (e, edge) in edges.iter().enumerate() {
            let (cause, effect) = (&edge.cause_id, &edge.effect_id);
            if !(0.0..=1.0).contains(&edge.trigger_probability) {
                return Err(NetworkError::TriggerOutOfRange {
                    cause: cause.clone(),
                    effect: effect.clone(),
                    value: edge.trigger_probability,
                });
            }
            if cause == effect {
                return Err(NetworkError::SelfLoop(cause.clone()));
            }
            let lookup = |id: &String| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingReference {
                        cause: cause.clone(),
                        effect: effect.clone(),
                        missing: id.clone(),
                    })
            };
            let (c, t) = (lookup(cause)?, lookup(effect)?);
            if !seen.insert((c, t)) {
                return Err(NetworkError::DuplicateEdge {
                    cause: cause.clone(),
                    effect: effect.clone(),
                });
            }
            outgoing[c].push(e);
            incoming[t].push(e);
        }

        let topo = topological_order(&nodes, &edges, &index, &incoming, &outgoing)?;

        let edge_keys: HashSet<String> = edges.iter().map(|e| e.key()).collect();
        for (key, &value) in &costs {
            let known = match (key.strip_prefix("node:"), key.strip_prefix("edge:")) {
                (Some(id), _) => index.contains_key(id),
                (_, Some(k)) => edge_keys.contains(k),
                _ => false,
            };
            if !known {
                return Err(NetworkError::UnknownCostKey(key.clone()));
            }
            if !(value.is_finite() && value > 0.0) {
                return Err(NetworkError::InvalidCost {
                    key: key.clone(),
                    value,
                });
            }
        }

        Ok(FailureNetwork {
            nodes,
            edges,
            costs,
            index,
            incoming,
            outgoing,
            topo,
        })
    }

    pub fn nodes(&self) -> &[FailureNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CauseEffectEdge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &FailureNode {
        &self.nodes[i]
    }

    pub fn edge(&self, e: usize) -> &CauseEffectEdge {
        &self.edges[e]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edge_index(&self, cause: &str, effect: &str) -> Option<usize> {
        let t = self.node_index(effect)?;
        self.incoming[t]
            .iter()
            .copied()
            .find(|&e| self.edges[e].cause_id == cause)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Indices of the edges pointing into node `i`.
    pub fn incoming(&self, i: usize) -> &[usize] {
        &self.incoming[i]
    }

    /// Indices of the edges leaving node `i`.
    pub fn outgoing(&self, i: usize) -> &[usize] {
        &self.outgoing[i]
    }

    /// Index of the cause node of edge `e`.
    pub fn cause_of(&self, e: usize) -> usize {
        self.index[&self.edges[e].cause_id]
    }

    pub fn effect_of(&self, e: usize) -> usize {
        self.index[&self.edges[e].effect_id]
    }

    pub fn is_root(&self, i: usize) -> bool {
        self.incoming[i].is_empty()
    }

    /// Node indices in a deterministic topological order (ties broken by
    /// document order).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn costs(&self) -> &BTreeMap<String, f64> {
        &self.costs
    }

    pub fn prior_cost(&self, i: usize) -> f64 {
        self.costs
            .get(&format!("node:{}", self.nodes[i].id))
            .copied()
            .unwrap_or(DEFAULT_PRIOR_COST)
    }

    pub fn trigger_cost(&self, e: usize) -> f64 {
        self.costs
            .get(&format!("edge:{}", self.edges[e].key()))
            .copied()
            .unwrap_or(DEFAULT_TRIGGER_COST)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serialization is infallible")
    }
}

fn topological_order(
    nodes: &[FailureNode],
    edges: &[CauseEffectEdge],
    index: &HashMap<String, usize>,
    incoming: &[Vec<usize>],
    outgoing: &[Vec<usize>],
) -> Result<Vec<usize>, NetworkError> {
    let mut indegree: Vec<usize> = incoming.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &e in &outgoing[i] {
            let t = index[&edges[e].effect_id];
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.insert(t);
            }
        }
    }
    if order.len() == nodes.len() {
        return Ok(order);
    }

    // Every leftover node still has a leftover predecessor, so walking
    // predecessors must revisit a node; the revisited stretch is a cycle.
    let start = (0..nodes.len()).find(|&i| indegree[i] > 0).unwrap();
    let mut path = vec![start];
    let mut position = HashMap::from([(start, 0usize)]);
    let mut current = start;
    loop {
        let pred = incoming[current]
            .iter()
            .map(|&e| index[&edges[e].cause_id])
            .find(|&p| indegree[p] > 0)
            .expect("leftover node has a leftover predecessor");
        if let Some(&at) = position.get(&pred) {
            let mut cycle: Vec<String> = path[at..].iter().map(|&i| nodes[i].id.clone()).collect();
            cycle.sort();
            return Err(NetworkError::Cycle { nodes: cycle });
        }
        position.insert(pred, path.len());
        path.push(pred);
        current = pred;
    }
}

impl TryFrom<NetworkDocument> for FailureNetwork {
    type Error = NetworkError;

    fn try_from(doc: NetworkDocument) -> Result<Self, Self::Error> {
        let nodes = doc
            .nodes
            .into_iter()
            .map(|raw| {
                let occurrence_class =
                    OccurrenceClass::new(raw.occurrence_class).map_err(|_| {
                        NetworkError::InvalidOccurrenceClass {
                            node: raw.id.clone(),
                            class: raw.occurrence_class,
                        }
                    })?;
                let severity = match raw.severity {
                    Some(s) if (1..=10).contains(&s) => Some(s as u8),
                    Some(s) => {
                        return Err(NetworkError::InvalidSeverity {
                            node: raw.id,
                            severity: s,
                        })
                    }
                    None => None,
                };
                Ok(FailureNode {
                    id: raw.id,
                    name: raw.name,
                    process_step: raw.process_step,
                    occurrence_class,
                    severity,
                    detection_hint: raw.detection_hint,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        FailureNetwork::new(nodes, doc.edges, doc.costs)
    }
}

impl From<FailureNetwork> for NetworkDocument {
    fn from(net: FailureNetwork) -> Self {
        NetworkDocument {
            nodes: net
                .nodes
                .into_iter()
                .map(|n| RawNode {
                    id: n.id,
                    name: n.name,
                    process_step: n.process_step,
                    occurrence_class: n.occurrence_class.get() as i64,
                    severity: n.severity.map(i64::from),
                    detection_hint: n.detection_hint,
                })
                .collect(),
            edges: net.edges,
            costs: net.costs,
        }
    }
}

/// Parses and validates a network JSON document.
pub fn parse_network(document: &str) -> Result<FailureNetwork, NetworkError> {
    let doc: NetworkDocument =
        serde_json::from_str(document).map_err(|e| NetworkError::Schema {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
    FailureNetwork::try_from(doc)
}
