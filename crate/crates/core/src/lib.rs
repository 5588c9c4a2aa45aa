//! Root cause analysis on FMEA failure networks.
//!
//! An expert-rated failure network ([`FailureNetwork`]) is checked for
//! over-explained failures, optionally repaired with a genetic search for the
//! closest consistent parameters, compiled into a leaky Noisy-OR Bayesian
//! network, and queried with likelihood weighting.

pub mod consistency;
pub mod inference;
pub mod network;
pub mod noisy_or;
pub mod occurrence;
pub mod params;
pub mod synthetic;

pub use consistency::{
    detect_inconsistencies, loss, recommend, GaConfig, InconsistencyReport, Recommendation,
};
pub use inference::{
    exact_posteriors, likelihood_weighting, rank_causes, rank_effects, Evidence, FailureState,
    InferenceError, PosteriorReport, SamplingConfig,
};
pub use network::{parse_network, FailureNetwork, NetworkError};
pub use noisy_or::{
    compile, compile_with, CompileError, CompileOptions, CompiledNetwork, NodeKind,
};
pub use occurrence::{OccurrenceClass, OccurrenceError};
pub use params::{ParameterError, ParameterVector};
