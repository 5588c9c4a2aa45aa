//! Posterior queries on a compiled network.
//!
//! [`likelihood_weighting`] is the production path; [`exact_posteriors`]
//! enumerates the joint distribution and is only usable on small networks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noisy_or::{CompiledNetwork, NodeKind};

pub const DEFAULT_SAMPLES: usize = 100_000;

/// Samples per batch. Fixed so that results do not depend on the thread count.
const BATCH_SIZE: usize = 4096;

/// Exact enumeration refuses networks with more free variables than this.
pub const MAX_EXACT_VARIABLES: usize = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("failure {id:?} is both confirmed and dismissed")]
    ConflictingEvidence { id: String },
    #[error("unknown failure {0:?}")]
    UnknownFailure(String),
    #[error("node {0:?} is not an original failure and cannot carry evidence")]
    NotAFailure(String),
    #[error("the evidence has probability zero under the model")]
    ImpossibleEvidence,
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("exact enumeration over {variables} variables exceeds the limit of {limit}")]
    TooLarge { variables: usize, limit: usize },
    #[error("no failure is confirmed as occurred")]
    NoConfirmedFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureState {
    Occurred,
    Absent,
}

impl FailureState {
    pub fn is_active(self) -> bool {
        self == FailureState::Occurred
    }
}

impl fmt::Display for FailureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureState::Occurred => "occurred",
            FailureState::Absent => "absent",
        })
    }
}

impl std::str::FromStr for FailureState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "occurred" => Ok(FailureState::Occurred),
            "absent" => Ok(FailureState::Absent),
            other => Err(format!("unknown failure state {other:?}")),
        }
    }
}

/// Observed states of original failures.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evidence(BTreeMap<String, FailureState>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds evidence from observations, rejecting a failure observed in
    /// both states.
    pub fn from_observations<I, S>(observations: I) -> Result<Self, InferenceError>
    where
        I: IntoIterator<Item = (S, FailureState)>,
        S: Into<String>,
    {
        let mut ev = Evidence::new();
        for (id, state) in observations {
            ev.observe(id, state)?;
        }
        Ok(ev)
    }

    pub fn observe(
        &mut self,
        id: impl Into<String>,
        state: FailureState,
    ) -> Result<(), InferenceError> {
        let id = id.into();
        match self.0.get(&id) {
            Some(&existing) if existing != state => Err(InferenceError::ConflictingEvidence { id }),
            _ => {
                self.0.insert(id, state);
                Ok(())
            }
        }
    }

    /// Sets a state, replacing any earlier observation of the same failure.
    pub fn set(&mut self, id: impl Into<String>, state: FailureState) {
        self.0.insert(id.into(), state);
    }

    pub fn retract(&mut self, id: &str) -> Option<FailureState> {
        self.0.remove(id)
    }

    pub fn get(&self, id: &str) -> Option<FailureState> {
        self.0.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, FailureState)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|(_, s)| s.is_active()).map(|(k, _)| k)
    }

    /// Per compiled node: `Some(state)` for evidence nodes.
    pub fn bind(&self, network: &CompiledNetwork) -> Result<Vec<Option<bool>>, InferenceError> {
        let mut bound = vec![None; network.len()];
        for (id, state) in self.iter() {
            let i = match network.failure_position(id) {
                Some(i) => i,
                None if network.position(id).is_some() => {
                    return Err(InferenceError::NotAFailure(id.to_string()))
                }
                None => return Err(InferenceError::UnknownFailure(id.to_string())),
            };
            bound[i] = Some(state.is_active());
        }
        Ok(bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Also report posteriors of leak nodes, keyed by the failure they belong to.
    pub include_leaks: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            include_leaks: false,
        }
    }
}

impl SamplingConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        SamplingConfig {
            n_samples,
            seed,
            include_leaks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    /// P(failure = 1 | evidence) per original failure.
    pub posteriors: BTreeMap<String, f64>,
    /// Standard error of each posterior estimate; zero for exact results.
    pub stderr: BTreeMap<String, f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Kish effective sample size `(Σw)² / Σw²`; zero for exact results.
    pub effective_sample_mass: f64,
    /// Leak posteriors keyed by the failure id, when requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub leaks: BTreeMap<String, f64>,
    /// P(evidence), exact results only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_probability: Option<f64>,
}

impl PosteriorReport {
    pub fn posterior(&self, id: &str) -> Option<f64> {
        self.posteriors.get(id).copied()
    }
}

/// Nodes whose posteriors are reported: failures first, then leaks.
fn tracked_nodes(network: &CompiledNetwork, include_leaks: bool) -> Vec<(String, usize, bool)> {
    let mut tracked: Vec<(String, usize, bool)> = network
        .failures()
        .map(|(id, i)| (id.to_string(), i, false))
        .collect();
    if include_leaks {
        for (id, _) in network.failures() {
            if let Some(l) = network.leak_of(id) {
                tracked.push((id.to_string(), l, true));
            }
        }
    }
    tracked
}

#[inline]
fn row_index(states: &[bool], parents: &[usize]) -> usize {
    parents
        .iter()
        .enumerate()
        .fold(0, |row, (j, &p)| row | (usize::from(states[p]) << j))
}

#[derive(Default)]
struct BatchSums {
    weight: f64,
    weight_sq: f64,
    active: Vec<f64>,
    active_sq: Vec<f64>,
}

/// Likelihood-weighting estimate of the failure posteriors.
///
/// Samples are drawn in fixed-size batches, each from its own ChaCha stream
/// of the master seed, and the batch sums are combined in batch order; the
/// result is identical for any degree of parallelism.
pub fn likelihood_weighting(
    network: &CompiledNetwork,
    evidence: &Evidence,
    config: SamplingConfig,
) -> Result<PosteriorReport, InferenceError> {
    if config.n_samples == 0 {
        return Err(InferenceError::NoSamples);
    }
    let bound = evidence.bind(network)?;
    let tracked = tracked_nodes(network, config.include_leaks);
    let slots: Vec<usize> = tracked.iter().map(|t| t.1).collect();

    let n_batches = config.n_samples.div_ceil(BATCH_SIZE);
    let batches: Vec<BatchSums> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH_SIZE.min(config.n_samples - b * BATCH_SIZE);
            run_batch(network, &bound, &slots, config.seed, b as u64, count)
        })
        .collect();

    let mut total = BatchSums {
        active: vec![0.0; slots.len()],
        active_sq: vec![0.0; slots.len()],
        ..Default::default()
    };
    for b in &batches {
        total.weight += b.weight;
        total.weight_sq += b.weight_sq;
        for k in 0..slots.len() {
            total.active[k] += b.active[k];
            total.active_sq[k] += b.active_sq[k];
        }
    }
    if total.weight <= 0.0 {
        return Err(InferenceError::ImpossibleEvidence);
    }

    let mut report = PosteriorReport {
        posteriors: BTreeMap::new(),
        stderr: BTreeMap::new(),
        n_samples: config.n_samples,
        seed: config.seed,
        effective_sample_mass: total.weight * total.weight / total.weight_sq,
        leaks: BTreeMap::new(),
        evidence_probability: None,
    };
    for (k, (id, i, is_leak)) in tracked.iter().enumerate() {
        let (mean, se) = match bound[*i] {
            Some(state) => (if state { 1.0 } else { 0.0 }, 0.0),
            None => {
                let mean = (total.active[k] / total.weight).clamp(0.0, 1.0);
                // delta-method variance of a self-normalized estimator
                let num = total.active_sq[k] * (1.0 - 2.0 * mean) + mean * mean * total.weight_sq;
                (mean, (num.max(0.0)).sqrt() / total.weight)
            }
        };
        if *is_leak {
            report.leaks.insert(id.clone(), mean);
        } else {
            report.posteriors.insert(id.clone(), mean);
            report.stderr.insert(id.clone(), se);
        }
    }
    Ok(report)
}

fn run_batch(
    network: &CompiledNetwork,
    bound: &[Option<bool>],
    slots: &[usize],
    seed: u64,
    stream: u64,
    count: usize,
) -> BatchSums {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut sums = BatchSums {
        active: vec![0.0; slots.len()],
        active_sq: vec![0.0; slots.len()],
        ..Default::default()
    };
    let mut states = vec![false; network.len()];
    for _ in 0..count {
        let mut w = 1.0;
        for (i, node) in network.nodes().iter().enumerate() {
            let p = node.cpt[row_index(&states, network.parents_of(i))];
            states[i] = match bound[i] {
                Some(true) => {
                    w *= p;
                    true
                }
                Some(false) => {
                    w *= 1.0 - p;
                    false
                }
                None => rng.random::<f64>() < p,
            };
        }
        if w == 0.0 {
            continue;
        }
        let w2 = w * w;
        sums.weight += w;
        sums.weight_sq += w2;
        for (k, &i) in slots.iter().enumerate() {
            if states[i] {
                sums.active[k] += w;
                sums.active_sq[k] += w2;
            }
        }
    }
    sums
}

/// A node in the enumeration plan: CPT over the remaining parents.
struct PlanNode {
    parents: Vec<usize>,
    cpt: Vec<f64>,
    evidence: Option<bool>,
}

/// Exact posteriors by enumerating every joint state.
///
/// Leak nodes that are not reported are summed out into their single child
/// first, which is exact because a leak is a parentless node with one child
/// and never carries evidence.
pub fn exact_posteriors(
    network: &CompiledNetwork,
    evidence: &Evidence,
) -> Result<PosteriorReport, InferenceError> {
    exact_posteriors_with(network, evidence, false)
}

pub fn exact_posteriors_with(
    network: &CompiledNetwork,
    evidence: &Evidence,
    include_leaks: bool,
) -> Result<PosteriorReport, InferenceError> {
    let bound = evidence.bind(network)?;
    let folded: Vec<bool> = network
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            n.kind == NodeKind::Leak && !include_leaks && network.children_of(i).len() == 1
        })
        .collect();

    let mut cpts: Vec<(Vec<usize>, Vec<f64>)> = network
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (network.parents_of(i).to_vec(), n.cpt.clone()))
        .collect();
    for (l, _) in folded.iter().enumerate().filter(|(_, &f)| f) {
        let leak_prior = network.node(l).cpt[0];
        let child = network.children_of(l)[0];
        let (parents, cpt) = &mut cpts[child];
        let j = parents
            .iter()
            .position(|&p| p == l)
            .expect("leak is a parent of its child");
        *cpt = sum_out_parent(cpt, j, leak_prior);
        parents.remove(j);
    }

    // renumber the surviving nodes
    let mut new_index = vec![usize::MAX; network.len()];
    let mut plan = Vec::new();
    for i in 0..network.len() {
        if folded[i] {
            continue;
        }
        new_index[i] = plan.len();
        let (parents, cpt) = &cpts[i];
        plan.push(PlanNode {
            parents: parents.iter().map(|&p| new_index[p]).collect(),
            cpt: cpt.clone(),
            evidence: bound[i],
        });
    }
    let free = plan.iter().filter(|p| p.evidence.is_none()).count();
    if free > MAX_EXACT_VARIABLES {
        return Err(InferenceError::TooLarge {
            variables: free,
            limit: MAX_EXACT_VARIABLES,
        });
    }

    let tracked = tracked_nodes(network, include_leaks);
    let slots: Vec<usize> = tracked.iter().map(|t| new_index[t.1]).collect();
    let mut acc = Enumeration {
        plan: &plan,
        slots: &slots,
        states: vec![false; plan.len()],
        total: 0.0,
        mass: vec![0.0; slots.len()],
    };
    acc.visit(0, 1.0);
    if acc.total <= 0.0 {
        return Err(InferenceError::ImpossibleEvidence);
    }

    let mut report = PosteriorReport {
        posteriors: BTreeMap::new(),
        stderr: BTreeMap::new(),
        n_samples: 0,
        seed: 0,
        effective_sample_mass: 0.0,
        leaks: BTreeMap::new(),
        evidence_probability: Some(acc.total),
    };
    for (k, (id, i, is_leak)) in tracked.iter().enumerate() {
        let p = match bound[*i] {
            Some(state) => f64::from(u8::from(state)),
            None => (acc.mass[k] / acc.total).clamp(0.0, 1.0),
        };
        if *is_leak {
            report.leaks.insert(id.clone(), p);
        } else {
            report.posteriors.insert(id.clone(), p);
            report.stderr.insert(id.clone(), 0.0);
        }
    }
    Ok(report)
}

/// Marginalizes parent `j` (prior `prior`) out of a CPT.
fn sum_out_parent(cpt: &[f64], j: usize, prior: f64) -> Vec<f64> {
    let low_mask = (1usize << j) - 1;
    (0..cpt.len() / 2)
        .map(|row| {
            let off = (row & low_mask) | ((row & !low_mask) << 1);
            let on = off | (1 << j);
            prior * cpt[on] + (1.0 - prior) * cpt[off]
        })
        .collect()
}

struct Enumeration<'a> {
    plan: &'a [PlanNode],
    slots: &'a [usize],
    states: Vec<bool>,
    total: f64,
    mass: Vec<f64>,
}

impl Enumeration<'_> {
    fn visit(&mut self, k: usize, prob: f64) {
        if prob == 0.0 {
            return;
        }
        if k == self.plan.len() {
            self.total += prob;
            for (s, &i) in self.slots.iter().enumerate() {
                if self.states[i] {
                    self.mass[s] += prob;
                }
            }
            return;
        }
        let node = &self.plan[k];
        let p = node.cpt[row_index(&self.states, &node.parents)];
        match node.evidence {
            Some(state) => {
                self.states[k] = state;
                self.visit(k + 1, prob * if state { p } else { 1.0 - p });
            }
            None => {
                self.states[k] = true;
                self.visit(k + 1, prob * p);
                self.states[k] = false;
                self.visit(k + 1, prob * (1.0 - p));
            }
        }
    }
}

/// Non-evidence failures that are ancestors of a confirmed failure, most
/// probable first (ties by id).
pub fn rank_causes(
    network: &CompiledNetwork,
    evidence: &Evidence,
    report: &PosteriorReport,
) -> Result<Vec<(String, f64)>, InferenceError> {
    rank_related(network, evidence, report, |net, i| net.parents_of(i))
}

/// Non-evidence failures that are descendants of a confirmed failure, most
/// probable first (ties by id).
pub fn rank_effects(
    network: &CompiledNetwork,
    evidence: &Evidence,
    report: &PosteriorReport,
) -> Result<Vec<(String, f64)>, InferenceError> {
    rank_related(network, evidence, report, |net, i| net.children_of(i))
}

fn rank_related<'n>(
    network: &'n CompiledNetwork,
    evidence: &Evidence,
    report: &PosteriorReport,
    step: impl Fn(&'n CompiledNetwork, usize) -> &'n [usize],
) -> Result<Vec<(String, f64)>, InferenceError> {
    let mut stack = Vec::new();
    for id in evidence.confirmed() {
        let i = network
            .failure_position(id)
            .ok_or_else(|| InferenceError::UnknownFailure(id.to_string()))?;
        stack.push(i);
    }
    if stack.is_empty() {
        return Err(InferenceError::NoConfirmedFailure);
    }
    let mut seen = BTreeSet::new();
    while let Some(i) = stack.pop() {
        for &j in step(network, i) {
            if seen.insert(j) {
                stack.push(j);
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = seen
        .into_iter()
        .map(|i| network.node(i))
        .filter(|n| n.kind == NodeKind::Failure && evidence.get(&n.id).is_none())
        .map(|n| (n.id.clone(), report.posterior(&n.id).unwrap_or(0.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}
