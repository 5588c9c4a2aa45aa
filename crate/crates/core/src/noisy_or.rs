//! Compilation of a failure network into a leaky Noisy-OR Bayesian network.
//!
//! Every failure with causes gets a leak parent (trigger 1) whose prior is
//! solved so that the failure's marginal matches its expert prior. Fan-in is
//! bounded by inserting latent aggregation nodes; because Noisy-OR is
//! decomposable the joint over the original failures is unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::FailureNetwork;
use crate::params::{ParameterError, ParameterVector};

pub const DEFAULT_MAX_GROUP_SIZE: usize = 5;

/// Widest gate whose full table is materialized (2^24 rows).
pub const MAX_TABLE_PARENTS: usize = 24;

const LEAK_SUFFIX: &str = "#leak";
const AGGREGATE_SUFFIX: &str = "#agg";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("trigger probability {0} is outside [0, 1]")]
    TriggerOutOfRange(f64),
    #[error(transparent)]
    Parameter(#[from] ParameterError),
    #[error("node {id} has {parents} parents, aggregation needs more than {max_group_size}")]
    AggregationNotNeeded {
        id: String,
        parents: usize,
        max_group_size: usize,
    },
    #[error("maximum group size must be at least 2, got {0}")]
    GroupSizeTooSmall(usize),
    #[error("generated node id {0:?} collides with an existing node")]
    IdCollision(String),
    #[error("node {node} references unknown or later parent {parent:?}")]
    BadParent { node: String, parent: String },
    #[error("{0} parents exceed the table limit of {MAX_TABLE_PARENTS}; use a smaller group size")]
    TableTooLarge(usize),
    #[error("node {node}: {reason}")]
    InvalidNode { node: String, reason: String },
}

/// P(X = 1) for a Noisy-OR node whose active parents carry `active_triggers`.
pub fn noisy_or_row(active_triggers: &[f64]) -> Result<f64, CompileError> {
    let mut absent = 1.0;
    for &t in active_triggers {
        if !(0.0..=1.0).contains(&t) {
            return Err(CompileError::TriggerOutOfRange(t));
        }
        absent *= 1.0 - t;
    }
    Ok(1.0 - absent)
}

/// Leak prior that brings a node's marginal absence probability to
/// `prior_of_absence`, given `(marginal, trigger)` for each parent.
///
/// A negative result means the parents alone already make the failure more
/// likely than its expert prior; it is returned unclamped.
pub fn leak_probability(prior_of_absence: f64, parents: &[(f64, f64)]) -> f64 {
    let explained_absence: f64 = parents.iter().map(|&(m, t)| 1.0 - t * m).product();
    if explained_absence == 0.0 {
        return if prior_of_absence == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
    }
    1.0 - prior_of_absence / explained_absence
}

/// Factorized marginals of every failure, computed in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// P(X = 1) from the parents alone, leak excluded. Roots carry their prior.
    pub pre_leak: Vec<f64>,
    /// Implied leak per node (`None` for roots), unclamped.
    pub implied_leak: Vec<Option<f64>>,
    /// P(X = 1) once the leak is clamped to `[0, 1]` and added; this is what
    /// children see as the parent marginal.
    pub effective: Vec<f64>,
}

/// Marginal activation probabilities under the parent-independence
/// approximation: parent joints are taken as the product of the parent
/// marginals.
pub fn marginal_actives(
    network: &FailureNetwork,
    params: &ParameterVector,
) -> Result<Marginals, ParameterError> {
    params.validate(network)?;
    Ok(marginal_actives_unchecked(
        network,
        &params.priors,
        &params.triggers,
    ))
}

pub(crate) fn marginal_actives_unchecked(
    network: &FailureNetwork,
    priors: &[f64],
    triggers: &[f64],
) -> Marginals {
    let n = network.len();
    let mut out = Marginals {
        pre_leak: vec![0.0; n],
        implied_leak: vec![None; n],
        effective: vec![0.0; n],
    };
    let mut parents = Vec::new();
    for &i in network.topological_order() {
        if network.is_root(i) {
            out.pre_leak[i] = priors[i];
            out.effective[i] = priors[i];
            continue;
        }
        parents.clear();
        parents.extend(
            network
                .incoming(i)
                .iter()
                .map(|&e| (out.effective[network.cause_of(e)], triggers[e])),
        );
        let explained_absence: f64 = parents.iter().map(|&(m, t)| 1.0 - t * m).product();
        let leak = leak_probability(1.0 - priors[i], &parents);
        out.pre_leak[i] = 1.0 - explained_absence;
        out.implied_leak[i] = Some(leak);
        out.effective[i] = 1.0 - (1.0 - leak.clamp(0.0, 1.0)) * explained_absence;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Failure,
    Leak,
    Aggregate,
}

/// A Noisy-OR gate before its CPT is materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSpec {
    pub id: String,
    pub kind: NodeKind,
    pub origin_id: Option<String>,
    /// Parent id and the trigger probability on the parent's edge.
    pub parents: Vec<(String, f64)>,
    /// Prior for parentless gates.
    pub prior: Option<f64>,
}

impl GateSpec {
    pub fn root(id: impl Into<String>, kind: NodeKind, prior: f64) -> Self {
        GateSpec {
            id: id.into(),
            kind,
            origin_id: None,
            parents: Vec::new(),
            prior: Some(prior),
        }
    }

    pub fn child(id: impl Into<String>, kind: NodeKind, parents: Vec<(String, f64)>) -> Self {
        GateSpec {
            id: id.into(),
            kind,
            origin_id: None,
            parents,
            prior: None,
        }
    }

    fn with_origin(mut self, origin: &str) -> Self {
        self.origin_id = Some(origin.to_string());
        self
    }
}

/// Replaces the parent set of `gate` by a tree of aggregation gates with at
/// most `max_group_size` parents each.
///
/// Parents are sorted by id and chunked greedily, level by level, until the
/// fan-in fits. Member triggers move onto the member→aggregate edges and each
/// aggregate feeds the child with trigger 1. A trailing single-member chunk is
/// passed through to the next level as is. Returns the aggregates in
/// dependency order followed by the rewritten gate.
pub fn insert_aggregation(
    gate: &GateSpec,
    max_group_size: usize,
) -> Result<Vec<GateSpec>, CompileError> {
    if max_group_size < 2 {
        return Err(CompileError::GroupSizeTooSmall(max_group_size));
    }
    if gate.parents.len() <= max_group_size {
        return Err(CompileError::AggregationNotNeeded {
            id: gate.id.clone(),
            parents: gate.parents.len(),
            max_group_size,
        });
    }
    let origin = gate.origin_id.as_deref().unwrap_or(&gate.id);
    let mut items = gate.parents.clone();
    items.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::new();
    let mut level = 1;
    while items.len() > max_group_size {
        let mut next = Vec::with_capacity(items.len().div_ceil(max_group_size));
        for (k, chunk) in items.chunks(max_group_size).enumerate() {
            if chunk.len() == 1 {
                next.push(chunk[0].clone());
                continue;
            }
            let id = format!("{}{AGGREGATE_SUFFIX}{level}.{k}", gate.id);
            out.push(
                GateSpec::child(id.clone(), NodeKind::Aggregate, chunk.to_vec())
                    .with_origin(origin),
            );
            next.push((id, 1.0));
        }
        items = next;
        level += 1;
    }
    let mut rewritten = gate.clone();
    rewritten.parents = items;
    out.push(rewritten);
    Ok(out)
}

/// A materialized node of the compiled network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompiledNode {
    pub id: String,
    pub kind: NodeKind,
    pub parents: Vec<String>,
    /// Noisy-OR trigger per parent, aligned with `parents`.
    pub triggers: Vec<f64>,
    /// P(node = 1) per parent configuration; bit `j` of the row index is the
    /// state of `parents[j]`.
    pub cpt: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_id: Option<String>,
}

impl CompiledNode {
    fn from_gate(gate: GateSpec) -> Result<Self, CompileError> {
        let (parents, triggers): (Vec<String>, Vec<f64>) = gate.parents.into_iter().unzip();
        let cpt = if parents.is_empty() {
            let prior = gate.prior.ok_or_else(|| CompileError::InvalidNode {
                node: gate.id.clone(),
                reason: "root without prior".into(),
            })?;
            if !(0.0..=1.0).contains(&prior) {
                return Err(CompileError::InvalidNode {
                    node: gate.id,
                    reason: format!("prior {prior} outside [0, 1]"),
                });
            }
            vec![prior]
        } else {
            noisy_or_table(&triggers)?
        };
        Ok(CompiledNode {
            id: gate.id,
            kind: gate.kind,
            parents,
            triggers,
            prior: if cpt.len() == 1 && gate.prior.is_some() {
                Some(cpt[0])
            } else {
                None
            },
            cpt,
            origin_id: gate.origin_id,
        })
    }
}

/// Full CPT of a Noisy-OR gate, rows indexed little-endian over the parents.
pub fn noisy_or_table(triggers: &[f64]) -> Result<Vec<f64>, CompileError> {
    if let Some(&t) = triggers.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CompileError::TriggerOutOfRange(t));
    }
    if triggers.len() > MAX_TABLE_PARENTS {
        return Err(CompileError::TableTooLarge(triggers.len()));
    }
    let mut absent = vec![1.0f64; 1 << triggers.len()];
    for row in 1..absent.len() {
        let j = row.trailing_zeros() as usize;
        absent[row] = absent[row & (row - 1)] * (1.0 - triggers[j]);
    }
    Ok(absent.into_iter().map(|a| 1.0 - a).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompiledDocument {
    nodes: Vec<CompiledNode>,
    index: BTreeMap<String, usize>,
    max_group_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    clamped_leaks: Vec<String>,
}

/// The compiled Bayesian network, nodes in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CompiledDocument", into = "CompiledDocument")]
pub struct CompiledNetwork {
    nodes: Vec<CompiledNode>,
    /// Original failure id → position in `nodes`.
    index: BTreeMap<String, usize>,
    max_group_size: usize,
    clamped_leaks: Vec<String>,
    parent_idx: Vec<Vec<usize>>,
    child_idx: Vec<Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl CompiledNetwork {
    /// Materializes `gates`, which must already be in topological order.
    pub fn from_gates(gates: Vec<GateSpec>, max_group_size: usize) -> Result<Self, CompileError> {
        let nodes = gates
            .into_iter()
            .map(CompiledNode::from_gate)
            .collect::<Result<Vec<_>, _>>()?;
        Self::assemble(nodes, max_group_size, Vec::new())
    }

    fn assemble(
        nodes: Vec<CompiledNode>,
        max_group_size: usize,
        clamped_leaks: Vec<String>,
    ) -> Result<Self, CompileError> {
        let mut by_id: HashMap<String, usize> = HashMap::with_capacity(nodes.len());
        let mut parent_idx = Vec::with_capacity(nodes.len());
        let mut child_idx: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            let invalid = |reason: String| CompileError::InvalidNode {
                node: node.id.clone(),
                reason,
            };
            if node.cpt.len() != 1 << node.parents.len() {
                return Err(invalid(format!(
                    "{} CPT rows for {} parents",
                    node.cpt.len(),
                    node.parents.len()
                )));
            }
            if node.triggers.len() != node.parents.len() {
                return Err(invalid("triggers and parents differ in length".into()));
            }
            if node.cpt.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(invalid("CPT entry outside [0, 1]".into()));
            }
            match node.kind {
                NodeKind::Leak if !node.parents.is_empty() => {
                    return Err(invalid("leak node with parents".into()))
                }
                NodeKind::Aggregate
                    if node.parents.len() < 2 || node.parents.len() > max_group_size =>
                {
                    return Err(invalid(format!(
                        "aggregate with {} parents",
                        node.parents.len()
                    )))
                }
                _ => {}
            }
            let mut ps = Vec::with_capacity(node.parents.len());
            for p in &node.parents {
                let &j = by_id.get(p).ok_or_else(|| CompileError::BadParent {
                    node: node.id.clone(),
                    parent: p.clone(),
                })?;
                ps.push(j);
                child_idx[j].push(i);
            }
            parent_idx.push(ps);
            if by_id.insert(node.id.clone(), i).is_some() {
                return Err(CompileError::IdCollision(node.id.clone()));
            }
            if node.kind == NodeKind::Failure {
                index.insert(node.id.clone(), i);
            }
        }
        Ok(CompiledNetwork {
            nodes,
            index,
            max_group_size,
            clamped_leaks,
            parent_idx,
            child_idx,
            by_id,
        })
    }

    pub fn nodes(&self) -> &[CompiledNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &CompiledNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Position of an original failure node.
    pub fn failure_position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Original failure ids and their node positions, sorted by id.
    pub fn failures(&self) -> impl Iterator<Item = (&str, usize)> {
        self.index.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parent_idx[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.child_idx[i]
    }

    pub fn max_group_size(&self) -> usize {
        self.max_group_size
    }

    /// Failures whose leak was negative and had to be clamped to zero.
    pub fn clamped_leaks(&self) -> &[String] {
        &self.clamped_leaks
    }

    /// Id of the leak node attached to `failure_id`, if any.
    pub fn leak_of(&self, failure_id: &str) -> Option<usize> {
        self.position(&format!("{failure_id}{LEAK_SUFFIX}"))
            .filter(|&i| self.nodes[i].kind == NodeKind::Leak)
    }

    /// Total number of CPT rows over all nodes with parents.
    pub fn cpt_rows(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !n.parents.is_empty())
            .map(|n| n.cpt.len())
            .sum()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn max_fan_in(&self) -> usize {
        self.parent_idx.iter().map(Vec::len).max().unwrap_or(0)
    }
}

impl TryFrom<CompiledDocument> for CompiledNetwork {
    type Error = CompileError;

    fn try_from(doc: CompiledDocument) -> Result<Self, Self::Error> {
        let net = CompiledNetwork::assemble(doc.nodes, doc.max_group_size, doc.clamped_leaks)?;
        if net.index != doc.index {
            return Err(CompileError::InvalidNode {
                node: "<index>".into(),
                reason: "failure index does not match the node list".into(),
            });
        }
        Ok(net)
    }
}

impl From<CompiledNetwork> for CompiledDocument {
    fn from(net: CompiledNetwork) -> Self {
        CompiledDocument {
            nodes: net.nodes,
            index: net.index,
            max_group_size: net.max_group_size,
            clamped_leaks: net.clamped_leaks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub max_group_size: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            max_group_size: DEFAULT_MAX_GROUP_SIZE,
        }
    }
}

impl CompileOptions {
    /// No fan-in limit; every failure keeps a flat CPT.
    pub fn flat() -> Self {
        CompileOptions {
            max_group_size: usize::MAX,
        }
    }
}

/// Compiles with the expert parameters and the default group size.
pub fn compile(network: &FailureNetwork) -> Result<CompiledNetwork, CompileError> {
    compile_with(
        network,
        &ParameterVector::expert(network),
        CompileOptions::default(),
    )
}

pub fn compile_with(
    network: &FailureNetwork,
    params: &ParameterVector,
    options: CompileOptions,
) -> Result<CompiledNetwork, CompileError> {
    if options.max_group_size < 2 {
        return Err(CompileError::GroupSizeTooSmall(options.max_group_size));
    }
    let marginals = marginal_actives(network, params)?;
    let originals: HashSet<&str> = network.nodes().iter().map(|n| n.id.as_str()).collect();

    let mut gates = Vec::with_capacity(network.len() * 2);
    let mut clamped = Vec::new();
    for &i in network.topological_order() {
        let node = network.node(i);
        if network.is_root(i) {
            gates.push(
                GateSpec::root(&node.id, NodeKind::Failure, params.priors[i]).with_origin(&node.id),
            );
            continue;
        }
        let leak = marginals.implied_leak[i].expect("non-root has a leak");
        if leak < 0.0 {
            log::warn!(
                "failure {} is over-explained by its causes (implied leak {leak:.6}); leak clamped to 0",
                node.id
            );
            clamped.push(node.id.clone());
        }
        let leak_id = format!("{}{LEAK_SUFFIX}", node.id);
        let mut parents: Vec<(String, f64)> = network
            .incoming(i)
            .iter()
            .map(|&e| (network.edge(e).cause_id.clone(), params.triggers[e]))
            .collect();
        parents.push((leak_id.clone(), 1.0));
        gates.push(
            GateSpec::root(leak_id, NodeKind::Leak, leak.clamp(0.0, 1.0)).with_origin(&node.id),
        );

        let gate = GateSpec::child(&node.id, NodeKind::Failure, parents).with_origin(&node.id);
        if gate.parents.len() > options.max_group_size {
            gates.extend(insert_aggregation(&gate, options.max_group_size)?);
        } else {
            gates.push(gate);
        }
    }
    if let Some(g) = gates
        .iter()
        .find(|g| g.kind != NodeKind::Failure && originals.contains(g.id.as_str()))
    {
        return Err(CompileError::IdCollision(g.id.clone()));
    }

    let nodes = gates
        .into_iter()
        .map(CompiledNode::from_gate)
        .collect::<Result<Vec<_>, _>>()?;
    CompiledNetwork::assemble(nodes, options.max_group_size, clamped)
}
