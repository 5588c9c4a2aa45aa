//! Persistent entities and the events that build them.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use fmea_bn::inference::{Evidence, FailureState, PosteriorReport};
use fmea_bn::{CompiledNetwork, FailureNetwork, GaConfig, InconsistencyReport, Recommendation};
use serde::{Deserialize, Serialize};

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyStatus {
    Unchecked,
    Inconsistent,
    Consistent,
    Compiled,
}

/// Which parameter vector a compile used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterSource {
    #[default]
    Expert,
    Recommended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileSettings {
    pub parameters: ParameterSource,
    pub group_size: usize,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub id: String,
    pub network: FailureNetwork,
    pub status: ConsistencyStatus,
    pub inconsistencies: Option<InconsistencyReport>,
    pub recommendation: Option<Recommendation>,
    /// Job that produced `recommendation`.
    pub recommendation_job: Option<String>,
    pub compiled: Option<Arc<CompiledNetwork>>,
    pub compile_settings: Option<CompileSettings>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NetworkEvent {
    Ingested {
        id: String,
        at: Timestamp,
        network: FailureNetwork,
    },
    Audited {
        at: Timestamp,
        report: InconsistencyReport,
    },
    Recommended {
        at: Timestamp,
        job_id: String,
        recommendation: Recommendation,
    },
    Compiled {
        at: Timestamp,
        settings: CompileSettings,
        compiled: Arc<CompiledNetwork>,
    },
}

impl NetworkRecord {
    pub fn replay(events: impl IntoIterator<Item = NetworkEvent>) -> Option<Self> {
        let mut events = events.into_iter();
        let mut record = match events.next()? {
            NetworkEvent::Ingested { id, at, network } => NetworkRecord {
                id,
                network,
                status: ConsistencyStatus::Unchecked,
                inconsistencies: None,
                recommendation: None,
                recommendation_job: None,
                compiled: None,
                compile_settings: None,
                created_at: at,
                updated_at: at,
            },
            _ => return None,
        };
        for event in events {
            record.apply(event);
        }
        Some(record)
    }

    pub fn apply(&mut self, event: NetworkEvent) {
        match event {
            NetworkEvent::Ingested { .. } => {}
            NetworkEvent::Audited { at, report } => {
                if self.status != ConsistencyStatus::Compiled {
                    self.status = if report.is_consistent() {
                        ConsistencyStatus::Consistent
                    } else {
                        ConsistencyStatus::Inconsistent
                    };
                }
                self.inconsistencies = Some(report);
                self.updated_at = at;
            }
            NetworkEvent::Recommended {
                at,
                job_id,
                recommendation,
            } => {
                self.recommendation = Some(recommendation);
                self.recommendation_job = Some(job_id);
                self.updated_at = at;
            }
            NetworkEvent::Compiled {
                at,
                settings,
                compiled,
            } => {
                self.status = ConsistencyStatus::Compiled;
                self.compiled = Some(compiled);
                self.compile_settings = Some(settings);
                self.updated_at = at;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceAction {
    Confirm,
    Dismiss,
    Retract,
}

impl EvidenceAction {
    pub fn state(self) -> Option<FailureState> {
        match self {
            EvidenceAction::Confirm => Some(FailureState::Occurred),
            EvidenceAction::Dismiss => Some(FailureState::Absent),
            EvidenceAction::Retract => None,
        }
    }
}

impl From<FailureState> for EvidenceAction {
    fn from(state: FailureState) -> Self {
        match state {
            FailureState::Occurred => EvidenceAction::Confirm,
            FailureState::Absent => EvidenceAction::Dismiss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: Timestamp,
    pub failure_id: String,
    pub action: EvidenceAction,
    /// Set when the entry came from a cell lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_id: Option<String>,
}

/// Applies one history entry; entries were validated when recorded.
pub fn apply_entry(evidence: &mut Evidence, entry: &HistoryEntry) {
    match entry.action.state() {
        Some(state) => evidence.set(entry.failure_id.clone(), state),
        None => {
            evidence.retract(&entry.failure_id);
        }
    }
}

/// Evidence obtained by replaying `history` from scratch.
pub fn replay_history<'h>(history: impl IntoIterator<Item = &'h HistoryEntry>) -> Evidence {
    let mut evidence = Evidence::new();
    for entry in history {
        apply_entry(&mut evidence, entry);
    }
    evidence
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSession {
    pub id: String,
    pub network_id: String,
    pub seed: u64,
    pub samples: usize,
    pub evidence: Evidence,
    pub history: Vec<HistoryEntry>,
    pub cached: Option<PosteriorReport>,
    /// True when `cached` predates the current evidence or seed.
    pub stale: bool,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Opened {
        id: String,
        network_id: String,
        seed: u64,
        samples: usize,
        at: Timestamp,
    },
    Evidence {
        entry: HistoryEntry,
    },
    Rerolled {
        at: Timestamp,
        seed: u64,
    },
    Computed {
        at: Timestamp,
        report: PosteriorReport,
    },
}

impl DiagnosisSession {
    pub fn replay(events: impl IntoIterator<Item = SessionEvent>) -> Option<Self> {
        let mut events = events.into_iter();
        let mut session = match events.next()? {
            SessionEvent::Opened {
                id,
                network_id,
                seed,
                samples,
                at,
            } => DiagnosisSession {
                id,
                network_id,
                seed,
                samples,
                evidence: Evidence::new(),
                history: Vec::new(),
                cached: None,
                stale: true,
                created_at: at,
                updated_at: at,
            },
            _ => return None,
        };
        for event in events {
            session.apply(event);
        }
        Some(session)
    }

    pub fn apply(&mut self, event: SessionEvent) {
        match event {
            SessionEvent::Opened { .. } => {}
            SessionEvent::Evidence { entry } => {
                apply_entry(&mut self.evidence, &entry);
                self.updated_at = entry.at;
                self.history.push(entry);
                self.stale = true;
            }
            SessionEvent::Rerolled { at, seed } => {
                self.seed = seed;
                self.updated_at = at;
                self.stale = true;
            }
            SessionEvent::Computed { at, report } => {
                self.cached = Some(report);
                self.stale = false;
                self.updated_at = at;
            }
        }
    }

    /// The cached report if it matches the current evidence and seed.
    pub fn fresh_report(&self) -> Option<&PosteriorReport> {
        self.cached.as_ref().filter(|_| !self.stale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub status: JobStatus,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub network_id: String,
    pub config: GaConfig,
    pub status: JobStatus,
    pub transitions: Vec<Transition>,
    pub recommendation: Option<Recommendation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JobEvent {
    Queued {
        id: String,
        network_id: String,
        config: GaConfig,
        at: Timestamp,
    },
    /// Put back in the queue after an interrupted run.
    Requeued {
        at: Timestamp,
    },
    Started {
        at: Timestamp,
    },
    Finished {
        at: Timestamp,
        recommendation: Recommendation,
    },
    Failed {
        at: Timestamp,
        error: String,
    },
}

impl JobRecord {
    pub fn replay(events: impl IntoIterator<Item = JobEvent>) -> Option<Self> {
        let mut events = events.into_iter();
        let mut job = match events.next()? {
            JobEvent::Queued {
                id,
                network_id,
                config,
                at,
            } => JobRecord {
                id,
                network_id,
                config,
                status: JobStatus::Queued,
                transitions: vec![Transition {
                    status: JobStatus::Queued,
                    at,
                }],
                recommendation: None,
                error: None,
            },
            _ => return None,
        };
        for event in events {
            job.apply(event);
        }
        Some(job)
    }

    pub fn apply(&mut self, event: JobEvent) {
        let (status, at) = match event {
            JobEvent::Queued { .. } => return,
            JobEvent::Requeued { at } => (JobStatus::Queued, at),
            JobEvent::Started { at } => (JobStatus::Running, at),
            JobEvent::Finished { at, recommendation } => {
                self.recommendation = Some(recommendation);
                (JobStatus::Done, at)
            }
            JobEvent::Failed { at, error } => {
                self.error = Some(error);
                (JobStatus::Failed, at)
            }
        };
        self.status = status;
        self.transitions.push(Transition { status, at });
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.status, JobStatus::Done | JobStatus::Failed)
    }
}
