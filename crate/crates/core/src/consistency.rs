//! Detection of over-explained failures and the genetic search for the
//! closest consistent parameter vector.
//!
//! The objective is the cost-weighted squared distance to the expert vector,
//! measured in occurrence classes for priors and in raw probability for
//! triggers, plus `alpha` per remaining inconsistency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::FailureNetwork;
use crate::noisy_or::marginal_actives_unchecked;
use crate::occurrence::OccurrenceClass;
use crate::params::{NamedParameters, ParameterError, ParameterVector};

/// Implied leaks above `-INCONSISTENCY_TOLERANCE` count as consistent, so a
/// prior that exactly matches its explained marginal is not flagged by
/// rounding noise.
pub const INCONSISTENCY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub failure_id: String,
    /// Expert prior P(X = 1).
    pub prior: f64,
    /// P(X = 1) explained by the parents alone.
    pub pre_leak_marginal: f64,
    /// Leak prior the node would need; negative here by construction. JSON
    /// has no infinity, so `-inf` (no leak can help) is written as `null`.
    #[serde(with = "unbounded_leak")]
    pub implied_leak: f64,
}

mod unbounded_leak {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub inconsistencies: Vec<Inconsistency>,
    pub count: usize,
}

impl InconsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.count == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.inconsistencies.iter().map(|i| i.failure_id.as_str())
    }
}

pub fn detect_inconsistencies(
    network: &FailureNetwork,
    params: &ParameterVector,
) -> Result<InconsistencyReport, ParameterError> {
    params.validate(network)?;
    let m = marginal_actives_unchecked(network, &params.priors, &params.triggers);
    let inconsistencies: Vec<Inconsistency> = network
        .topological_order()
        .iter()
        .filter_map(|&i| {
            let leak = m.implied_leak[i]?;
            (leak < -INCONSISTENCY_TOLERANCE).then(|| Inconsistency {
                failure_id: network.node(i).id.clone(),
                prior: params.priors[i],
                pre_leak_marginal: m.pre_leak[i],
                implied_leak: leak,
            })
        })
        .collect();
    Ok(InconsistencyReport {
        count: inconsistencies.len(),
        inconsistencies,
    })
}

fn count_inconsistencies(network: &FailureNetwork, priors: &[f64], triggers: &[f64]) -> usize {
    marginal_actives_unchecked(network, priors, triggers)
        .implied_leak
        .iter()
        .flatten()
        .filter(|&&l| l < -INCONSISTENCY_TOLERANCE)
        .count()
}

/// Change cost per gene: priors first, then triggers.
pub fn cost_vector(network: &FailureNetwork) -> Vec<f64> {
    (0..network.len())
        .map(|i| network.prior_cost(i))
        .chain((0..network.edges().len()).map(|e| network.trigger_cost(e)))
        .collect()
}

/// `q(p)`: occurrence class for prior genes, the raw value for trigger genes.
fn q_vector(params: &ParameterVector) -> Vec<f64> {
    params
        .priors
        .iter()
        .map(|&p| class_value(p))
        .chain(params.triggers.iter().copied())
        .collect()
}

fn class_value(p: f64) -> f64 {
    f64::from(
        OccurrenceClass::from_probability(p.clamp(0.0, 1.0))
            .unwrap()
            .get(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub distance: f64,
    pub inconsistencies: usize,
}

/// Precomputed loss for one network and expert vector.
struct Objective<'a> {
    network: &'a FailureNetwork,
    n_priors: usize,
    expert_q: Vec<f64>,
    /// `(c_i / ||c||)^2`
    weights: Vec<f64>,
    alpha: f64,
}

impl<'a> Objective<'a> {
    fn new(
        network: &'a FailureNetwork,
        expert: &ParameterVector,
        costs: &[f64],
        alpha: f64,
    ) -> Result<Self, ParameterError> {
        expert.validate(network)?;
        if costs.len() != expert.len() {
            return Err(ParameterError::LengthMismatch {
                what: "costs",
                expected: expert.len(),
                got: costs.len(),
            });
        }
        let norm_sq: f64 = costs.iter().map(|c| c * c).sum();
        Ok(Objective {
            network,
            n_priors: network.len(),
            expert_q: q_vector(expert),
            weights: costs.iter().map(|c| c * c / norm_sq).collect(),
            alpha,
        })
    }

    fn evaluate(&self, genes: &[f64]) -> Evaluation {
        let (priors, triggers) = genes.split_at(self.n_priors);
        let distance: f64 = genes
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let q = if k < self.n_priors { class_value(g) } else { g };
                let d = q - self.expert_q[k];
                self.weights[k] * d * d
            })
            .sum();
        let inconsistencies = count_inconsistencies(self.network, priors, triggers);
        Evaluation {
            loss: distance + self.alpha * inconsistencies as f64,
            distance,
            inconsistencies,
        }
    }
}

/// `||(c / ||c||) · (q(p) − q_e)||² + alpha · n_incon(p)`.
pub fn loss(
    p: &ParameterVector,
    expert: &ParameterVector,
    costs: &[f64],
    alpha: f64,
    network: &FailureNetwork,
) -> Result<f64, ParameterError> {
    p.validate(network)?;
    let objective = Objective::new(network, expert, costs, alpha)?;
    let genes: Vec<f64> = p.genes().collect();
    Ok(objective.evaluate(&genes).loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub elitism: usize,
    pub max_generations: usize,
    /// Stop after this many generations without a better individual.
    pub stagnation_limit: usize,
    pub base_mutation_rate: f64,
    pub max_mutation_rate: f64,
    /// Factor applied to the mutation rate after a stagnant generation.
    pub mutation_growth: f64,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 100,
            elitism: 2,
            max_generations: 500,
            stagnation_limit: 50,
            base_mutation_rate: 0.1,
            max_mutation_rate: 0.5,
            mutation_growth: 1.5,
            crossover_rate: 0.8,
            tournament_size: 2,
            alpha: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best loss seen up to and including this generation.
    pub best_loss: f64,
    pub best_inconsistencies: usize,
    pub mutation_rate: f64,
    /// Largest `gene − expert` over every trigger gene of the population.
    pub max_trigger_excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Prior,
    Trigger,
}

/// One row of the expert-versus-suggestion comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    /// `node:<id>` or `edge:<cause>-><effect>`.
    pub parameter: String,
    pub kind: ParameterKind,
    /// Process step of the failure the parameter belongs to (the effect, for triggers).
    pub process_step: String,
    pub before: f64,
    pub after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_before: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_after: Option<u8>,
    /// Class delta for priors, raw delta for triggers.
    pub delta: f64,
}

impl DiffRow {
    pub fn changed(&self) -> bool {
        self.delta != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub process_step: String,
    pub prior_changes: usize,
    pub abs_class_delta: f64,
    pub trigger_changes: usize,
    pub abs_trigger_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub suggested: ParameterVector,
    pub parameters: NamedParameters,
    pub loss: f64,
    pub distance: f64,
    pub initial_inconsistencies: usize,
    pub residual_inconsistencies: usize,
    pub generations: usize,
    pub seed: u64,
    pub diff: Vec<DiffRow>,
    pub history: Vec<GenerationStats>,
}

impl Recommendation {
    pub fn changed(&self) -> impl Iterator<Item = &DiffRow> {
        self.diff.iter().filter(|r| r.changed())
    }

    /// Changes per process step, in order of first appearance.
    pub fn by_process_step(&self) -> Vec<StepSummary> {
        let mut steps: Vec<StepSummary> = Vec::new();
        for row in &self.diff {
            let pos = match steps
                .iter()
                .position(|s| s.process_step == row.process_step)
            {
                Some(p) => p,
                None => {
                    steps.push(StepSummary {
                        process_step: row.process_step.clone(),
                        prior_changes: 0,
                        abs_class_delta: 0.0,
                        trigger_changes: 0,
                        abs_trigger_delta: 0.0,
                    });
                    steps.len() - 1
                }
            };
            if !row.changed() {
                continue;
            }
            let s = &mut steps[pos];
            match row.kind {
                ParameterKind::Prior => {
                    s.prior_changes += 1;
                    s.abs_class_delta += row.delta.abs();
                }
                ParameterKind::Trigger => {
                    s.trigger_changes += 1;
                    s.abs_trigger_delta += row.delta.abs();
                }
            }
        }
        steps
    }
}

fn diff_rows(
    network: &FailureNetwork,
    expert: &ParameterVector,
    suggested: &ParameterVector,
) -> Vec<DiffRow> {
    let priors = network.nodes().iter().enumerate().map(|(i, node)| {
        let before = OccurrenceClass::from_probability(expert.priors[i])
            .unwrap()
            .get();
        let after = OccurrenceClass::from_probability(suggested.priors[i])
            .unwrap()
            .get();
        DiffRow {
            parameter: format!("node:{}", node.id),
            kind: ParameterKind::Prior,
            process_step: node.process_step.clone(),
            before: expert.priors[i],
            after: suggested.priors[i],
            class_before: Some(before),
            class_after: Some(after),
            delta: f64::from(after) - f64::from(before),
        }
    });
    let triggers = network.edges().iter().enumerate().map(|(e, edge)| DiffRow {
        parameter: format!("edge:{}", edge.key()),
        kind: ParameterKind::Trigger,
        process_step: network.node(network.effect_of(e)).process_step.clone(),
        before: expert.triggers[e],
        after: suggested.triggers[e],
        class_before: None,
        class_after: None,
        delta: suggested.triggers[e] - expert.triggers[e],
    });
    priors.chain(triggers).collect()
}

/// Genetic operators bound to one network and expert vector.
struct Operators {
    n_priors: usize,
    /// Trigger caps (the expert values), indexed by edge.
    caps: Vec<f64>,
    /// Gene indices per failure: its prior and the triggers of its incoming edges.
    bundles: Vec<Vec<usize>>,
}

impl Operators {
    fn new(network: &FailureNetwork, expert: &ParameterVector) -> Self {
        let n = network.len();
        Operators {
            n_priors: n,
            caps: expert.triggers.clone(),
            bundles: (0..n)
                .map(|i| {
                    std::iter::once(i)
                        .chain(network.incoming(i).iter().map(|&e| n + e))
                        .collect()
                })
                .collect(),
        }
    }

    fn mutate(&self, genes: &mut [f64], rate: f64, rng: &mut ChaCha8Rng) {
        for (k, gene) in genes.iter_mut().enumerate() {
            if rng.random::<f64>() >= rate {
                continue;
            }
            if k < self.n_priors {
                let width = OccurrenceClass::from_probability(*gene)
                    .unwrap()
                    .interval()
                    .width();
                *gene = (*gene + rng.random_range(-width..=width)).clamp(0.0, 1.0);
            } else {
                let cap = self.caps[k - self.n_priors];
                if cap <= 0.0 {
                    continue;
                }
                let span = cap / 10.0;
                *gene = (*gene + rng.random_range(-span..=span / 2.0)).clamp(0.0, cap);
            }
        }
    }

    /// Uniform crossover over failure bundles.
    fn crossover(&self, a: &[f64], b: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut child = a.to_vec();
        for bundle in &self.bundles {
            if rng.random::<bool>() {
                for &k in bundle {
                    child[k] = b[k];
                }
            }
        }
        child
    }

    fn max_trigger_excess(&self, population: &[Vec<f64>]) -> f64 {
        population
            .iter()
            .flat_map(|g| {
                g[self.n_priors..]
                    .iter()
                    .zip(&self.caps)
                    .map(|(t, cap)| t - cap)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn tournament(evals: &[Evaluation], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..evals.len());
    for _ in 1..size.max(1) {
        let other = rng.random_range(0..evals.len());
        if evals[other].loss < evals[best].loss {
            best = other;
        }
    }
    best
}

/// Searches for the consistent parameter vector closest to `expert`.
pub fn recommend(
    network: &FailureNetwork,
    expert: &ParameterVector,
    config: &GaConfig,
) -> Result<Recommendation, ParameterError> {
    recommend_observed(network, expert, config, |_, _| {})
}

/// Like [`recommend`], calling `observer(generation, population)` after each
/// generation is formed.
pub fn recommend_observed(
    network: &FailureNetwork,
    expert: &ParameterVector,
    config: &GaConfig,
    mut observer: impl FnMut(usize, &[Vec<f64>]),
) -> Result<Recommendation, ParameterError> {
    let costs = cost_vector(network);
    let objective = Objective::new(network, expert, &costs, config.alpha)?;
    let ops = Operators::new(network, expert);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.population.max(1);
    let elitism = config.elitism.min(size);

    let expert_genes: Vec<f64> = expert.genes().collect();
    let mut population = Vec::with_capacity(size);
    population.push(expert_genes.clone());
    while population.len() < size {
        let mut g = expert_genes.clone();
        ops.mutate(&mut g, config.base_mutation_rate, &mut rng);
        population.push(g);
    }
    let evaluate = |pop: &[Vec<f64>]| -> Vec<Evaluation> {
        pop.par_iter().map(|g| objective.evaluate(g)).collect()
    };

    let mut evals = evaluate(&population);
    let initial = objective.evaluate(&expert_genes);
    let argmin = |evals: &[Evaluation]| {
        (0..evals.len())
            .min_by(|&a, &b| evals[a].loss.total_cmp(&evals[b].loss))
            .unwrap()
    };
    let b = argmin(&evals);
    let mut best = (population[b].clone(), evals[b]);
    let mut rate = config.base_mutation_rate;
    let mut stagnant = 0;
    observer(0, &population);
    let mut history = vec![GenerationStats {
        generation: 0,
        best_loss: best.1.loss,
        best_inconsistencies: best.1.inconsistencies,
        mutation_rate: rate,
        max_trigger_excess: ops.max_trigger_excess(&population),
    }];

    let mut generation = 0;
    while generation < config.max_generations
        && stagnant < config.stagnation_limit
        && best.1.loss > 0.0
    {
        generation += 1;
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| evals[a].loss.total_cmp(&evals[b].loss));

        let mut next: Vec<Vec<f64>> = order[..elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < size {
            let pa = tournament(&evals, config.tournament_size, &mut rng);
            let mut child = if rng.random::<f64>() < config.crossover_rate {
                let pb = tournament(&evals, config.tournament_size, &mut rng);
                ops.crossover(&population[pa], &population[pb], &mut rng)
            } else {
                population[pa].clone()
            };
            ops.mutate(&mut child, rate, &mut rng);
            next.push(child);
        }
        population = next;
        evals = evaluate(&population);
        observer(generation, &population);

        let b = argmin(&evals);
        if evals[b].loss < best.1.loss {
            best = (population[b].clone(), evals[b]);
            rate = config.base_mutation_rate;
            stagnant = 0;
        } else {
            rate = (rate * config.mutation_growth).min(config.max_mutation_rate);
            stagnant += 1;
        }
        history.push(GenerationStats {
            generation,
            best_loss: best.1.loss,
            best_inconsistencies: best.1.inconsistencies,
            mutation_rate: rate,
            max_trigger_excess: ops.max_trigger_excess(&population),
        });
    }

    let (genes, eval) = best;
    let (priors, triggers) = genes.split_at(network.len());
    let suggested = ParameterVector {
        priors: priors.to_vec(),
        triggers: triggers.to_vec(),
    };
    Ok(Recommendation {
        parameters: suggested.to_named(network),
        diff: diff_rows(network, expert, &suggested),
        suggested,
        loss: eval.loss,
        distance: eval.distance,
        initial_inconsistencies: initial.inconsistencies,
        residual_inconsistencies: eval.inconsistencies,
        generations: generation,
        seed: config.seed,
        history,
    })
}
