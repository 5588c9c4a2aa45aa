//! Flat parameter vector of prior and trigger probabilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::FailureNetwork;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParameterError {
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter {name} = {value} is outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("missing parameter {0}")]
    Missing(String),
    #[error("unknown parameter {0}")]
    Unknown(String),
}

/// Prior probability per failure (indexed like the network's nodes) and
/// trigger probability per edge (indexed like its edges).
///
/// As a gene vector the priors come first, followed by the triggers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub priors: Vec<f64>,
    pub triggers: Vec<f64>,
}

impl ParameterVector {
    /// Representative class priors and the expert trigger probabilities.
    pub fn expert(network: &FailureNetwork) -> Self {
        ParameterVector {
            priors: network
                .nodes()
                .iter()
                .map(|n| n.occurrence_class.representative_prior())
                .collect(),
            triggers: network
                .edges()
                .iter()
                .map(|e| e.trigger_probability)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.priors.len() + self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn genes(&self) -> impl Iterator<Item = f64> + '_ {
        self.priors.iter().chain(self.triggers.iter()).copied()
    }

    pub fn validate(&self, network: &FailureNetwork) -> Result<(), ParameterError> {
        if self.priors.len() != network.len() {
            return Err(ParameterError::LengthMismatch {
                what: "priors",
                expected: network.len(),
                got: self.priors.len(),
            });
        }
        if self.triggers.len() != network.edges().len() {
            return Err(ParameterError::LengthMismatch {
                what: "triggers",
                expected: network.edges().len(),
                got: self.triggers.len(),
            });
        }
        let names = network
            .nodes()
            .iter()
            .map(|n| format!("node:{}", n.id))
            .chain(network.edges().iter().map(|e| format!("edge:{}", e.key())));
        for (name, value) in names.zip(self.genes()) {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParameterError::OutOfRange { name, value });
            }
        }
        Ok(())
    }

    /// Keyed by failure id and `cause->effect`.
    pub fn to_named(&self, network: &FailureNetwork) -> NamedParameters {
        NamedParameters {
            priors: network
                .nodes()
                .iter()
                .zip(&self.priors)
                .map(|(n, &p)| (n.id.clone(), p))
                .collect(),
            triggers: network
                .edges()
                .iter()
                .zip(&self.triggers)
                .map(|(e, &t)| (e.key(), t))
                .collect(),
        }
    }

    pub fn from_named(
        network: &FailureNetwork,
        named: &NamedParameters,
    ) -> Result<Self, ParameterError> {
        for id in named.priors.keys() {
            if network.node_index(id).is_none() {
                return Err(ParameterError::Unknown(format!("node:{id}")));
            }
        }
        for key in named.triggers.keys() {
            if !network.edges().iter().any(|e| &e.key() == key) {
                return Err(ParameterError::Unknown(format!("edge:{key}")));
            }
        }
        let priors = network
            .nodes()
            .iter()
            .map(|n| {
                named
                    .priors
                    .get(&n.id)
                    .copied()
                    .ok_or_else(|| ParameterError::Missing(format!("node:{}", n.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let triggers = network
            .edges()
            .iter()
            .map(|e| {
                named
                    .triggers
                    .get(&e.key())
                    .copied()
                    .ok_or_else(|| ParameterError::Missing(format!("edge:{}", e.key())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = ParameterVector { priors, triggers };
        p.validate(network)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParameters {
    pub priors: BTreeMap<String, f64>,
    pub triggers: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    #[test]
    fn named_round_trip() {
        let net = parse_network(
            r#"{"nodes": [
                {"id": "A", "name": "a", "process_step": "s", "occurrence_class": 5},
                {"id": "B", "name": "b", "process_step": "s", "occurrence_class": 7}],
                "edges": [{"cause": "A", "effect": "B", "trigger_probability": 0.3}]}"#,
        )
        .unwrap();
        let p = ParameterVector::expert(&net);
        assert_eq!(p.len(), 3);
        let named = p.to_named(&net);
        assert_eq!(named.triggers["A->B"], 0.3);
        assert_eq!(ParameterVector::from_named(&net, &named).unwrap(), p);

        let mut missing = named.clone();
        missing.priors.remove("B");
        assert_eq!(
            ParameterVector::from_named(&net, &missing),
            Err(ParameterError::Missing("node:B".into()))
        );
        let mut bad = p.clone();
        bad.triggers[0] = 1.5;
        assert!(matches!(
            bad.validate(&net),
            Err(ParameterError::OutOfRange { .. })
        ));
        bad.triggers.push(0.1);
        assert!(matches!(
            bad.validate(&net),
            Err(ParameterError::LengthMismatch { .. })
        ));
    }
}
