//! The pipeline behind both the HTTP API and the CLI.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use chrono::Utc;
use crossbeam_channel::{Receiver, Sender};
use fmea_bn::inference::{rank_causes, rank_effects, DEFAULT_SAMPLES};
use fmea_bn::noisy_or::DEFAULT_MAX_GROUP_SIZE;
use fmea_bn::{
    compile_with, detect_inconsistencies, likelihood_weighting, parse_network, recommend,
    CompileOptions, CompiledNetwork, Evidence, FailureNetwork, GaConfig, InconsistencyReport,
    InferenceError, NodeKind, ParameterVector, PosteriorReport, SamplingConfig,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::cells::CellTable;
use crate::error::{Result, ServiceError};
use crate::records::{
    CompileSettings, ConsistencyStatus, DiagnosisSession, EvidenceAction, HistoryEntry, JobEvent,
    JobRecord, JobStatus, NetworkEvent, NetworkRecord, ParameterSource, SessionEvent, Timestamp,
};
use crate::store::EventStore;

const NETWORKS: &str = "networks";
const SESSIONS: &str = "sessions";
const JOBS: &str = "jobs";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Likelihood-weighting samples per query.
    pub samples: usize,
    /// Default seed for sessions and recommendation jobs; random when unset.
    pub seed: Option<u64>,
    pub group_size: usize,
    /// Default GA penalty weight when a request does not set one.
    pub alpha: Option<f64>,
    /// Recommendation jobs run concurrently; 0 leaves jobs queued.
    pub workers: usize,
    pub cells: Option<CellTable>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            samples: DEFAULT_SAMPLES,
            seed: None,
            group_size: DEFAULT_MAX_GROUP_SIZE,
            alpha: None,
            workers: 1,
            cells: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileRequest {
    /// Compile despite inconsistencies; negative leaks are clamped to zero.
    pub force: bool,
    pub parameters: ParameterSource,
    pub group_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionRequest {
    pub network_id: String,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFailure {
    pub failure_id: String,
    pub name: String,
    pub process_step: String,
    pub posterior: f64,
    pub stderr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    pub evidence: Evidence,
    /// Ancestors of confirmed failures, most probable first.
    pub causes: Vec<RankedFailure>,
    /// Descendants of confirmed failures, most probable first.
    pub effects: Vec<RankedFailure>,
    pub seed: u64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub report: PosteriorReport,
    pub rankings: Rankings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledSummary {
    pub nodes: usize,
    pub failures: usize,
    pub leaks: usize,
    pub aggregates: usize,
    pub cpt_rows: usize,
    pub max_fan_in: usize,
    pub clamped_leaks: Vec<String>,
}

impl CompiledSummary {
    pub fn of(compiled: &CompiledNetwork) -> Self {
        CompiledSummary {
            nodes: compiled.len(),
            failures: compiled.count(NodeKind::Failure),
            leaks: compiled.count(NodeKind::Leak),
            aggregates: compiled.count(NodeKind::Aggregate),
            cpt_rows: compiled.cpt_rows(),
            max_fan_in: compiled.max_fan_in(),
            clamped_leaks: compiled.clamped_leaks().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSummary {
    pub job_id: Option<String>,
    pub loss: f64,
    pub distance: f64,
    pub initial_inconsistencies: usize,
    pub residual_inconsistencies: usize,
    pub generations: usize,
    pub changed_parameters: usize,
}

/// A network record without the bulky compiled artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkView {
    pub id: String,
    pub status: ConsistencyStatus,
    pub nodes: usize,
    pub edges: usize,
    pub inconsistencies: Option<InconsistencyReport>,
    pub recommendation: Option<RecommendationSummary>,
    pub compiled: Option<CompiledSummary>,
    pub compile_settings: Option<CompileSettings>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub network: FailureNetwork,
}

impl From<&NetworkRecord> for NetworkView {
    fn from(r: &NetworkRecord) -> Self {
        NetworkView {
            id: r.id.clone(),
            status: r.status,
            nodes: r.network.len(),
            edges: r.network.edges().len(),
            inconsistencies: r.inconsistencies.clone(),
            recommendation: r.recommendation.as_ref().map(|rec| RecommendationSummary {
                job_id: r.recommendation_job.clone(),
                loss: rec.loss,
                distance: rec.distance,
                initial_inconsistencies: rec.initial_inconsistencies,
                residual_inconsistencies: rec.residual_inconsistencies,
                generations: rec.generations,
                changed_parameters: rec.changed().count(),
            }),
            compiled: r.compiled.as_deref().map(CompiledSummary::of),
            compile_settings: r.compile_settings.clone(),
            created_at: r.created_at,
            updated_at: r.updated_at,
            network: r.network.clone(),
        }
    }
}

/// Everything the service holds, for comparing state across restarts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub networks: Vec<NetworkRecord>,
    pub sessions: Vec<DiagnosisSession>,
    pub jobs: Vec<JobRecord>,
}

type Shared<T> = Arc<RwLock<BTreeMap<String, Arc<T>>>>;

struct Inner {
    config: ServiceConfig,
    store: EventStore,
    networks: Shared<RwLock<NetworkRecord>>,
    /// One mutex per session: evidence changes are single-writer.
    sessions: Shared<Mutex<DiagnosisSession>>,
    jobs: Shared<Mutex<JobRecord>>,
}

/// Handle to the service state. Clones share state and the job queue.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
    queue: Sender<String>,
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

fn lookup<T>(map: &Shared<T>, kind: &'static str, id: &str) -> Result<Arc<T>> {
    map.read()
        .get(id)
        .cloned()
        .ok_or_else(|| ServiceError::not_found(kind, id))
}

fn corrupt(kind: &str, id: &str, message: &str) -> ServiceError {
    ServiceError::Corrupt {
        path: format!("{kind}/{id}.jsonl"),
        message: message.to_string(),
    }
}

pub fn validate_ga_config(config: &GaConfig) -> Result<()> {
    let invalid = |m: String| Err(ServiceError::Invalid(m));
    if config.population < 2 {
        return invalid(format!(
            "population must be at least 2, got {}",
            config.population
        ));
    }
    if config.elitism > config.population {
        return invalid("elitism exceeds the population".into());
    }
    if config.tournament_size == 0 {
        return invalid("tournament_size must be positive".into());
    }
    for (name, rate) in [
        ("base_mutation_rate", config.base_mutation_rate),
        ("max_mutation_rate", config.max_mutation_rate),
        ("crossover_rate", config.crossover_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return invalid(format!("{name} must be in [0, 1], got {rate}"));
        }
    }
    if !(config.mutation_growth.is_finite() && config.mutation_growth >= 1.0) {
        return invalid(format!(
            "mutation_growth must be finite and >= 1, got {}",
            config.mutation_growth
        ));
    }
    if !(config.alpha.is_finite() && config.alpha >= 0.0) {
        return invalid(format!(
            "alpha must be finite and non-negative, got {}",
            config.alpha
        ));
    }
    Ok(())
}

fn rank(
    network: &FailureNetwork,
    compiled: &CompiledNetwork,
    evidence: &Evidence,
    report: &PosteriorReport,
) -> Result<Rankings> {
    let describe = |list: Vec<(String, f64)>| -> Vec<RankedFailure> {
        list.into_iter()
            .map(|(id, posterior)| {
                let node = network.node_index(&id).map(|i| network.node(i));
                RankedFailure {
                    stderr: report.stderr.get(&id).copied().unwrap_or(0.0),
                    name: node.map(|n| n.name.clone()).unwrap_or_default(),
                    process_step: node.map(|n| n.process_step.clone()).unwrap_or_default(),
                    detection_hint: node.and_then(|n| n.detection_hint.clone()),
                    failure_id: id,
                    posterior,
                }
            })
            .collect()
    };
    let (causes, effects) = match (
        rank_causes(compiled, evidence, report),
        rank_effects(compiled, evidence, report),
    ) {
        (Ok(c), Ok(e)) => (describe(c), describe(e)),
        (Err(InferenceError::NoConfirmedFailure), _)
        | (_, Err(InferenceError::NoConfirmedFailure)) => (Vec::new(), Vec::new()),
        (Err(e), _) | (_, Err(e)) => return Err(e.into()),
    };
    Ok(Rankings {
        evidence: evidence.clone(),
        causes,
        effects,
        seed: report.seed,
        n_samples: report.n_samples,
    })
}

impl Service {
    /// Opens the data directory, replays every log and starts the workers.
    /// Jobs that were queued or running when the last process stopped are
    /// queued again.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let store = EventStore::open(&config.data_dir)?;
        let mut networks = BTreeMap::new();
        for (id, events) in store.load::<NetworkEvent>(NETWORKS)? {
            let record = NetworkRecord::replay(events)
                .ok_or_else(|| corrupt(NETWORKS, &id, "missing ingest"))?;
            if record.id != id {
                return Err(corrupt(NETWORKS, &id, "id does not match file name"));
            }
            networks.insert(id, Arc::new(RwLock::new(record)));
        }
        let mut sessions = BTreeMap::new();
        for (id, events) in store.load::<SessionEvent>(SESSIONS)? {
            let session = DiagnosisSession::replay(events)
                .ok_or_else(|| corrupt(SESSIONS, &id, "missing open"))?;
            if session.id != id {
                return Err(corrupt(SESSIONS, &id, "id does not match file name"));
            }
            sessions.insert(id, Arc::new(Mutex::new(session)));
        }
        let mut jobs = BTreeMap::new();
        for (id, events) in store.load::<JobEvent>(JOBS)? {
            let job = JobRecord::replay(events)
                .ok_or_else(|| corrupt(JOBS, &id, "missing queue entry"))?;
            if job.id != id {
                return Err(corrupt(JOBS, &id, "id does not match file name"));
            }
            jobs.insert(id, Arc::new(Mutex::new(job)));
        }
        log::info!(
            "loaded {} networks, {} sessions, {} jobs from {}",
            networks.len(),
            sessions.len(),
            jobs.len(),
            store.root().display()
        );

        let workers = config.workers;
        let inner = Arc::new(Inner {
            config,
            store,
            networks: Arc::new(RwLock::new(networks)),
            sessions: Arc::new(RwLock::new(sessions)),
            jobs: Arc::new(RwLock::new(jobs)),
        });
        let (queue, rx) = crossbeam_channel::unbounded();
        for k in 0..workers {
            let inner = Arc::clone(&inner);
            let rx: Receiver<String> = rx.clone();
            thread::Builder::new()
                .name(format!("rca-worker-{k}"))
                .spawn(move || {
                    while let Ok(job_id) = rx.recv() {
                        inner.execute_job(&job_id);
                    }
                })?;
        }
        let service = Service { inner, queue };
        service.resume_jobs()?;
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    fn resume_jobs(&self) -> Result<()> {
        let pending: Vec<Arc<Mutex<JobRecord>>> =
            self.inner.jobs.read().values().cloned().collect();
        for handle in pending {
            let mut job = handle.lock();
            match job.status {
                JobStatus::Running => {
                    let event = JobEvent::Requeued { at: Utc::now() };
                    self.inner.store.append(JOBS, &job.id, &event)?;
                    job.apply(event);
                }
                JobStatus::Queued => {}
                JobStatus::Done | JobStatus::Failed => continue,
            }
            let _ = self.queue.send(job.id.clone());
        }
        Ok(())
    }

    /// Parses, validates and audits a network document. Identical documents
    /// get distinct ids.
    pub fn ingest(&self, document: &str) -> Result<NetworkRecord> {
        let network = parse_network(document)?;
        let id = new_id("net");
        let at = Utc::now();
        let ingested = NetworkEvent::Ingested {
            id: id.clone(),
            at,
            network,
        };
        self.inner.store.append(NETWORKS, &id, &ingested)?;
        let mut record = NetworkRecord::replay([ingested]).expect("ingest event opens a record");
        let report =
            detect_inconsistencies(&record.network, &ParameterVector::expert(&record.network))
                .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let audited = NetworkEvent::Audited { at, report };
        self.inner.store.append(NETWORKS, &id, &audited)?;
        record.apply(audited);
        log::info!(
            "ingested {id} ({} nodes, status {:?})",
            record.network.len(),
            record.status
        );
        self.inner
            .networks
            .write()
            .insert(id, Arc::new(RwLock::new(record.clone())));
        Ok(record)
    }

    pub fn network(&self, id: &str) -> Result<NetworkRecord> {
        Ok(lookup(&self.inner.networks, "network", id)?.read().clone())
    }

    pub fn networks(&self) -> Vec<NetworkView> {
        let handles: Vec<_> = self.inner.networks.read().values().cloned().collect();
        handles
            .iter()
            .map(|h| NetworkView::from(&*h.read()))
            .collect()
    }

    /// The consistency report of the expert parameters.
    pub fn audit(&self, id: &str) -> Result<InconsistencyReport> {
        let handle = lookup(&self.inner.networks, "network", id)?;
        if let Some(report) = handle.read().inconsistencies.clone() {
            return Ok(report);
        }
        let mut record = handle.write();
        let report =
            detect_inconsistencies(&record.network, &ParameterVector::expert(&record.network))
                .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let event = NetworkEvent::Audited {
            at: Utc::now(),
            report: report.clone(),
        };
        self.inner.store.append(NETWORKS, id, &event)?;
        record.apply(event);
        Ok(report)
    }

    /// GA configuration from request fields, falling back to the service
    /// defaults for `alpha` and `seed` and to the library defaults otherwise.
    pub fn ga_config(&self, overrides: Option<serde_json::Value>) -> Result<GaConfig> {
        let mut fields = match overrides {
            None | Some(serde_json::Value::Null) => serde_json::Map::new(),
            Some(serde_json::Value::Object(map)) => map,
            Some(other) => {
                return Err(ServiceError::Invalid(format!(
                    "expected a JSON object, got {other}"
                )))
            }
        };
        if let Some(alpha) = self.inner.config.alpha {
            fields.entry("alpha").or_insert(alpha.into());
        }
        if let Some(seed) = self.inner.config.seed {
            fields.entry("seed").or_insert(seed.into());
        }
        let config: GaConfig = serde_json::from_value(serde_json::Value::Object(fields))
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        validate_ga_config(&config)?;
        Ok(config)
    }

    fn enqueue_job(&self, network_id: &str, config: GaConfig) -> Result<JobRecord> {
        validate_ga_config(&config)?;
        lookup(&self.inner.networks, "network", network_id)?;
        let id = new_id("job");
        let event = JobEvent::Queued {
            id: id.clone(),
            network_id: network_id.to_string(),
            config,
            at: Utc::now(),
        };
        self.inner.store.append(JOBS, &id, &event)?;
        let job = JobRecord::replay([event]).expect("queue event opens a job");
        self.inner
            .jobs
            .write()
            .insert(id, Arc::new(Mutex::new(job.clone())));
        Ok(job)
    }

    /// Queues a recommendation job for the worker pool.
    pub fn submit_recommendation(&self, network_id: &str, config: GaConfig) -> Result<JobRecord> {
        let job = self.enqueue_job(network_id, config)?;
        // a closed queue only happens during shutdown; the job resumes on restart
        let _ = self.queue.send(job.id.clone());
        Ok(job)
    }

    /// Runs a recommendation job on the calling thread.
    pub fn run_recommendation(&self, network_id: &str, config: GaConfig) -> Result<JobRecord> {
        let job = self.enqueue_job(network_id, config)?;
        self.inner.execute_job(&job.id);
        self.job(&job.id)
    }

    pub fn job(&self, id: &str) -> Result<JobRecord> {
        Ok(lookup(&self.inner.jobs, "job", id)?.lock().clone())
    }

    /// Builds the Bayesian network. Refused for inconsistent parameters
    /// unless `force` is set, and for networks that are already compiled.
    pub fn compile(&self, id: &str, request: &CompileRequest) -> Result<NetworkRecord> {
        let handle = lookup(&self.inner.networks, "network", id)?;
        if handle.read().inconsistencies.is_none() {
            self.audit(id)?;
        }
        let mut record = handle.write();
        if record.status == ConsistencyStatus::Compiled {
            return Err(ServiceError::Conflict(format!(
                "network {id} is already compiled"
            )));
        }
        let (params, residual) = match request.parameters {
            ParameterSource::Expert => (
                ParameterVector::expert(&record.network),
                record.inconsistencies.as_ref().map_or(0, |r| r.count),
            ),
            ParameterSource::Recommended => {
                let rec = record.recommendation.as_ref().ok_or_else(|| {
                    ServiceError::Conflict(format!("network {id} has no finished recommendation"))
                })?;
                (rec.suggested.clone(), rec.residual_inconsistencies)
            }
        };
        if residual > 0 && !request.force {
            return Err(ServiceError::Conflict(format!(
                "network {id} has {residual} inconsistent failures under the {:?} parameters; \
                 repair them or compile with force",
                request.parameters
            )));
        }
        let group_size = request.group_size.unwrap_or(self.inner.config.group_size);
        let compiled = compile_with(
            &record.network,
            &params,
            CompileOptions {
                max_group_size: group_size,
            },
        )?;
        let event = NetworkEvent::Compiled {
            at: Utc::now(),
            settings: CompileSettings {
                parameters: request.parameters,
                group_size,
                forced: request.force,
            },
            compiled: Arc::new(compiled),
        };
        self.inner.store.append(NETWORKS, id, &event)?;
        record.apply(event);
        log::info!(
            "compiled {id}: {} nodes",
            record.compiled.as_ref().map_or(0, |c| c.len())
        );
        Ok(record.clone())
    }

    fn compiled(&self, network_id: &str) -> Result<(Arc<CompiledNetwork>, FailureNetwork)> {
        let handle = lookup(&self.inner.networks, "network", network_id)?;
        let record = handle.read();
        let compiled = record.compiled.clone().ok_or_else(|| {
            ServiceError::Conflict(format!("network {network_id} is not compiled"))
        })?;
        Ok((compiled, record.network.clone()))
    }

    fn seed_or_random(&self, seed: Option<u64>) -> u64 {
        seed.or(self.inner.config.seed).unwrap_or_else(rand::random)
    }

    fn sample(
        compiled: &CompiledNetwork,
        evidence: &Evidence,
        seed: u64,
        samples: usize,
    ) -> Result<PosteriorReport> {
        Ok(likelihood_weighting(
            compiled,
            evidence,
            SamplingConfig::new(samples, seed),
        )?)
    }

    /// One-off query that is not recorded anywhere.
    pub fn infer(
        &self,
        network_id: &str,
        evidence: &Evidence,
        seed: Option<u64>,
        samples: Option<usize>,
    ) -> Result<InferenceResult> {
        let (compiled, network) = self.compiled(network_id)?;
        let report = Self::sample(
            &compiled,
            evidence,
            self.seed_or_random(seed),
            samples.unwrap_or(self.inner.config.samples),
        )?;
        let rankings = rank(&network, &compiled, evidence, &report)?;
        Ok(InferenceResult { report, rankings })
    }

    /// Opens a diagnosis session on a compiled network. The seed is fixed for
    /// the life of the session unless rerolled.
    pub fn open_session(&self, request: &SessionRequest) -> Result<DiagnosisSession> {
        let (compiled, _) = self.compiled(&request.network_id)?;
        let samples = request.samples.unwrap_or(self.inner.config.samples);
        if samples == 0 {
            return Err(ServiceError::Invalid("samples must be positive".into()));
        }
        let id = new_id("ses");
        let opened = SessionEvent::Opened {
            id: id.clone(),
            network_id: request.network_id.clone(),
            seed: self.seed_or_random(request.seed),
            samples,
            at: Utc::now(),
        };
        let mut session =
            DiagnosisSession::replay([opened.clone()]).expect("open event opens a session");
        let report = Self::sample(&compiled, &session.evidence, session.seed, samples)?;
        let computed = SessionEvent::Computed {
            at: Utc::now(),
            report,
        };
        self.inner.store.append(SESSIONS, &id, &opened)?;
        self.inner.store.append(SESSIONS, &id, &computed)?;
        session.apply(computed);
        self.inner
            .sessions
            .write()
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<DiagnosisSession> {
        Ok(lookup(&self.inner.sessions, "session", id)?.lock().clone())
    }

    /// The cached report, recomputed and recorded when stale.
    fn current_report(
        &self,
        session: &mut DiagnosisSession,
        compiled: &CompiledNetwork,
    ) -> Result<PosteriorReport> {
        if let Some(report) = session.fresh_report() {
            return Ok(report.clone());
        }
        let report = Self::sample(compiled, &session.evidence, session.seed, session.samples)?;
        let event = SessionEvent::Computed {
            at: Utc::now(),
            report: report.clone(),
        };
        self.inner.store.append(SESSIONS, &session.id, &event)?;
        session.apply(event);
        Ok(report)
    }

    /// Applies evidence changes atomically: nothing is recorded unless every
    /// change is valid and the new evidence has positive probability.
    fn change_evidence(
        &self,
        session_id: &str,
        changes: &[(String, EvidenceAction)],
        cell_id: Option<&str>,
    ) -> Result<PosteriorReport> {
        let handle = lookup(&self.inner.sessions, "session", session_id)?;
        let mut session = handle.lock();
        let (compiled, _) = self.compiled(&session.network_id)?;
        let mut evidence = session.evidence.clone();
        let mut entries = Vec::new();
        let at = Utc::now();
        for (failure_id, action) in changes {
            if compiled.failure_position(failure_id).is_none() {
                return Err(InferenceError::UnknownFailure(failure_id.clone()).into());
            }
            match action.state() {
                Some(state) if evidence.get(failure_id) == Some(state) => continue,
                Some(state) => evidence.observe(failure_id.clone(), state)?,
                None if evidence.retract(failure_id).is_none() => continue,
                None => {}
            }
            entries.push(HistoryEntry {
                at,
                failure_id: failure_id.clone(),
                action: *action,
                cell_id: cell_id.map(str::to_string),
            });
        }
        if entries.is_empty() {
            return self.current_report(&mut session, &compiled);
        }
        let report = Self::sample(&compiled, &evidence, session.seed, session.samples)?;
        for entry in entries {
            let event = SessionEvent::Evidence { entry };
            self.inner.store.append(SESSIONS, session_id, &event)?;
            session.apply(event);
        }
        let event = SessionEvent::Computed {
            at: Utc::now(),
            report: report.clone(),
        };
        self.inner.store.append(SESSIONS, session_id, &event)?;
        session.apply(event);
        debug_assert_eq!(session.evidence, evidence);
        Ok(report)
    }

    /// Confirms, dismisses or retracts one failure and returns fresh
    /// posteriors. Repeating the current state, or retracting a failure that
    /// is not in the evidence, changes nothing.
    pub fn apply_evidence(
        &self,
        session_id: &str,
        failure_id: &str,
        action: EvidenceAction,
    ) -> Result<PosteriorReport> {
        self.change_evidence(session_id, &[(failure_id.to_string(), action)], None)
    }

    /// Applies every observation listed for `cell_id` in the cell table.
    pub fn prefill(&self, session_id: &str, cell_id: &str) -> Result<PosteriorReport> {
        let table = self
            .inner
            .config
            .cells
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict("no cell table is configured".into()))?;
        let rows = table
            .get(cell_id)
            .ok_or_else(|| ServiceError::not_found("cell", cell_id))?;
        let changes: Vec<(String, EvidenceAction)> = rows
            .iter()
            .map(|(id, state)| (id.clone(), EvidenceAction::from(*state)))
            .collect();
        self.change_evidence(session_id, &changes, Some(cell_id))
    }

    /// Replaces the session seed and recomputes the posteriors.
    pub fn reroll(&self, session_id: &str, seed: Option<u64>) -> Result<PosteriorReport> {
        let handle = lookup(&self.inner.sessions, "session", session_id)?;
        let mut session = handle.lock();
        let (compiled, _) = self.compiled(&session.network_id)?;
        let event = SessionEvent::Rerolled {
            at: Utc::now(),
            seed: seed.unwrap_or_else(rand::random),
        };
        self.inner.store.append(SESSIONS, session_id, &event)?;
        session.apply(event);
        self.current_report(&mut session, &compiled)
    }

    /// Cause and effect lists for the current evidence; both are empty until
    /// some failure is confirmed.
    pub fn rankings(&self, session_id: &str) -> Result<Rankings> {
        let handle = lookup(&self.inner.sessions, "session", session_id)?;
        let mut session = handle.lock();
        let (compiled, network) = self.compiled(&session.network_id)?;
        let report = self.current_report(&mut session, &compiled)?;
        rank(&network, &compiled, &session.evidence, &report)
    }

    pub fn compiled_network(&self, network_id: &str) -> Result<Arc<CompiledNetwork>> {
        Ok(self.compiled(network_id)?.0)
    }

    pub fn snapshot(&self) -> Snapshot {
        let networks: Vec<_> = self.inner.networks.read().values().cloned().collect();
        let sessions: Vec<_> = self.inner.sessions.read().values().cloned().collect();
        let jobs: Vec<_> = self.inner.jobs.read().values().cloned().collect();
        Snapshot {
            networks: networks.iter().map(|h| h.read().clone()).collect(),
            sessions: sessions.iter().map(|h| h.lock().clone()).collect(),
            jobs: jobs.iter().map(|h| h.lock().clone()).collect(),
        }
    }
}

impl Inner {
    fn execute_job(&self, job_id: &str) {
        if let Err(e) = self.try_execute_job(job_id) {
            log::error!("job {job_id}: {e}");
        }
    }

    fn try_execute_job(&self, job_id: &str) -> Result<()> {
        let handle = lookup(&self.jobs, "job", job_id)?;
        let (network_id, config) = {
            let mut job = handle.lock();
            if job.status != JobStatus::Queued {
                return Ok(());
            }
            let event = JobEvent::Started { at: Utc::now() };
            self.store.append(JOBS, job_id, &event)?;
            job.apply(event);
            (job.network_id.clone(), job.config.clone())
        };
        let network_handle = lookup(&self.networks, "network", &network_id)?;
        let network = network_handle.read().network.clone();
        let expert = ParameterVector::expert(&network);
        log::info!("job {job_id}: recommending for {network_id}");

        let outcome = catch_unwind(AssertUnwindSafe(|| recommend(&network, &expert, &config)));
        let event = match outcome {
            Ok(Ok(recommendation)) => {
                let mut record = network_handle.write();
                let event = NetworkEvent::Recommended {
                    at: Utc::now(),
                    job_id: job_id.to_string(),
                    recommendation: recommendation.clone(),
                };
                self.store.append(NETWORKS, &network_id, &event)?;
                record.apply(event);
                JobEvent::Finished {
                    at: Utc::now(),
                    recommendation,
                }
            }
            Ok(Err(e)) => JobEvent::Failed {
                at: Utc::now(),
                error: e.to_string(),
            },
            Err(panic) => JobEvent::Failed {
                at: Utc::now(),
                error: panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "recommendation panicked".into()),
            },
        };
        let mut job = handle.lock();
        self.store.append(JOBS, job_id, &event)?;
        job.apply(event);
        log::info!("job {job_id}: {:?}", job.status);
        Ok(())
    }
}
