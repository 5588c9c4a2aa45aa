mod common;

use common::{config, wait_for_job, ZERO_LEAK_COLLIDER};
use fmea_bn::synthetic::{self, SIX_NODE_JSON};
use fmea_bn::{
    exact_posteriors, recommend, Evidence, FailureState, GaConfig, NetworkError, ParameterVector,
};
use fmea_rca::records::{replay_history, ParameterSource};
use fmea_rca::{
    CompileRequest, ConsistencyStatus, EvidenceAction, JobStatus, Service, ServiceError,
    SessionRequest,
};

fn open(dir: &tempfile::TempDir, workers: usize) -> Service {
    Service::open(config(dir.path(), workers)).unwrap()
}

fn compiled_six_node(service: &Service) -> String {
    let id = service.ingest(SIX_NODE_JSON).unwrap().id;
    service.compile(&id, &CompileRequest::default()).unwrap();
    id
}

fn session(service: &Service, network_id: &str, seed: u64) -> String {
    let request = SessionRequest {
        network_id: network_id.into(),
        seed: Some(seed),
        samples: None,
    };
    service.open_session(&request).unwrap().id
}

fn small_ga(seed: u64) -> GaConfig {
    GaConfig {
        population: 30,
        max_generations: 40,
        seed,
        ..GaConfig::default()
    }
}

#[test]
fn ingest_validates_and_never_deduplicates() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let two = r#"{"nodes": [
        {"id": "P", "name": "p", "process_step": "s", "occurrence_class": 6},
        {"id": "Q", "name": "q", "process_step": "s", "occurrence_class": 7}],
        "edges": [{"cause": "P", "effect": "Q", "trigger_probability": 0.3}]}"#;
    let first = service.ingest(two).unwrap();
    let second = service.ingest(two).unwrap();
    assert_ne!(first.id, second.id);
    assert_eq!(first.status, ConsistencyStatus::Consistent);

    let cyclic = two.replace(
        r#""edges": ["#,
        r#""edges": [{"cause": "Q", "effect": "P", "trigger_probability": 0.1},"#,
    );
    assert!(matches!(
        service.ingest(&cyclic),
        Err(ServiceError::Network(NetworkError::Cycle { .. }))
    ));
    match service.ingest("{\"nodes\": [\n  {\"id\": 3}]}") {
        Err(ServiceError::Network(NetworkError::Schema { line, .. })) => assert_eq!(line, 2),
        other => panic!("expected a schema error, got {other:?}"),
    }
    assert_eq!(service.networks().len(), 2);
}

#[test]
fn audit_reports_the_seeded_violations() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let seeded = synthetic::seeded_inconsistent(3, 20, 35, 4);
    let record = service.ingest(&seeded.network.to_json()).unwrap();
    assert_eq!(record.status, ConsistencyStatus::Inconsistent);
    let report = service.audit(&record.id).unwrap();
    let mut flagged: Vec<&str> = report.ids().collect();
    flagged.sort_unstable();
    let mut injected: Vec<&str> = seeded.injected.iter().map(String::as_str).collect();
    injected.sort_unstable();
    assert_eq!(flagged, injected);

    let consistent = service.ingest(SIX_NODE_JSON).unwrap();
    assert!(service
        .audit(&consistent.id)
        .unwrap()
        .inconsistencies
        .is_empty());
    assert!(matches!(
        service.audit("net-missing"),
        Err(ServiceError::NotFound { .. })
    ));
}

#[test]
fn recommendation_job_runs_to_done_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 2);
    let seeded = synthetic::seeded_inconsistent(8, 15, 25, 3);
    let id = service.ingest(&seeded.network.to_json()).unwrap().id;

    let queued = service.submit_recommendation(&id, small_ga(4)).unwrap();
    assert_eq!(queued.status, JobStatus::Queued);
    let job = wait_for_job(&service, &queued.id);
    let statuses: Vec<_> = job.transitions.iter().map(|t| t.status).collect();
    assert_eq!(
        statuses,
        [JobStatus::Queued, JobStatus::Running, JobStatus::Done]
    );

    let direct = recommend(
        &seeded.network,
        &ParameterVector::expert(&seeded.network),
        &small_ga(4),
    )
    .unwrap();
    assert_eq!(job.recommendation.as_ref(), Some(&direct));
    let record = service.network(&id).unwrap();
    assert_eq!(record.recommendation, Some(direct));
    assert_eq!(
        record.recommendation_job.as_deref(),
        Some(queued.id.as_str())
    );

    assert!(matches!(
        service.submit_recommendation("net-missing", small_ga(0)),
        Err(ServiceError::NotFound { .. })
    ));
    let bad = GaConfig {
        crossover_rate: 2.0,
        ..small_ga(0)
    };
    assert!(matches!(
        service.submit_recommendation(&id, bad),
        Err(ServiceError::Invalid(_))
    ));
}

#[test]
fn ga_config_applies_service_defaults_under_request_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 0);
    cfg.alpha = Some(12.0);
    cfg.seed = Some(77);
    let service = Service::open(cfg).unwrap();
    let defaults = service.ga_config(None).unwrap();
    assert_eq!(
        (defaults.alpha, defaults.seed, defaults.population),
        (12.0, 77, 100)
    );
    let explicit = service
        .ga_config(Some(serde_json::json!({"alpha": 1.0, "population": 10})))
        .unwrap();
    assert_eq!(
        (explicit.alpha, explicit.seed, explicit.population),
        (1.0, 77, 10)
    );
    assert!(service
        .ga_config(Some(serde_json::json!({"bogus": 1})))
        .is_err());
}

#[test]
fn compile_is_gated_on_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let seeded = synthetic::seeded_inconsistent(12, 12, 20, 2);
    let id = service.ingest(&seeded.network.to_json()).unwrap().id;

    assert!(matches!(
        service.compile(&id, &CompileRequest::default()),
        Err(ServiceError::Conflict(_))
    ));
    let recommended = CompileRequest {
        parameters: ParameterSource::Recommended,
        ..CompileRequest::default()
    };
    assert!(matches!(
        service.compile(&id, &recommended),
        Err(ServiceError::Conflict(_))
    ));
    assert!(matches!(
        service.open_session(&SessionRequest {
            network_id: id.clone(),
            ..SessionRequest::default()
        }),
        Err(ServiceError::Conflict(_))
    ));

    let forced = service
        .compile(
            &id,
            &CompileRequest {
                force: true,
                group_size: Some(3),
                ..CompileRequest::default()
            },
        )
        .unwrap();
    assert_eq!(forced.status, ConsistencyStatus::Compiled);
    let compiled = forced.compiled.as_ref().unwrap();
    assert_eq!(compiled.clamped_leaks().len(), 2);
    assert!(compiled.max_fan_in() <= 3);
    assert!(forced.compile_settings.as_ref().unwrap().forced);
    // the audit result survives compilation
    assert_eq!(forced.inconsistencies.as_ref().unwrap().count, 2);
    assert!(matches!(
        service.compile(&id, &CompileRequest::default()),
        Err(ServiceError::Conflict(_))
    ));
}

#[test]
fn compile_with_recommended_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let seeded = synthetic::seeded_inconsistent(21, 12, 18, 2);
    let id = service.ingest(&seeded.network.to_json()).unwrap().id;
    let job = service
        .run_recommendation(
            &id,
            GaConfig {
                seed: 1,
                ..GaConfig::default()
            },
        )
        .unwrap();
    let rec = job.recommendation.unwrap();
    let request = CompileRequest {
        parameters: ParameterSource::Recommended,
        force: rec.residual_inconsistencies > 0,
        ..CompileRequest::default()
    };
    let record = service.compile(&id, &request).unwrap();
    let compiled = record.compiled.unwrap();
    // roots carry the suggested priors
    for (i, node) in seeded.network.nodes().iter().enumerate() {
        if seeded.network.is_root(i) {
            let pos = compiled.failure_position(&node.id).unwrap();
            assert_eq!(compiled.node(pos).prior, Some(rec.suggested.priors[i]));
        }
    }
}

#[test]
fn evidence_updates_rankings_and_retract_restores_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let network = compiled_six_node(&service);
    let sid = session(&service, &network, 5);
    let initial = service.session(&sid).unwrap().cached.unwrap();
    let empty = service.rankings(&sid).unwrap();
    assert!(empty.causes.is_empty() && empty.effects.is_empty());

    let confirmed = service
        .apply_evidence(&sid, "X1", EvidenceAction::Confirm)
        .unwrap();
    assert_eq!(confirmed.posteriors["X1"], 1.0);
    let rankings = service.rankings(&sid).unwrap();
    let causes: Vec<&str> = rankings
        .causes
        .iter()
        .map(|c| c.failure_id.as_str())
        .collect();
    assert_eq!(causes.len(), 5);
    assert!(rankings
        .causes
        .windows(2)
        .all(|w| w[0].posterior >= w[1].posterior));
    assert!(rankings.effects.is_empty());
    let compiled = service.compiled_network(&network).unwrap();
    let evidence = Evidence::from_observations([("X1", FailureState::Occurred)]).unwrap();
    let exact = exact_posteriors(&compiled, &evidence).unwrap();
    let top = fmea_bn::rank_causes(&compiled, &evidence, &exact).unwrap();
    assert_eq!(rankings.causes[0].failure_id, top[0].0);
    assert_eq!(rankings.causes[0].name, "Cover leaky");
    for cause in &rankings.causes {
        assert!((cause.posterior - exact.posteriors[&cause.failure_id]).abs() < 0.02);
    }

    // a repeat is a no-op
    let again = service
        .apply_evidence(&sid, "X1", EvidenceAction::Confirm)
        .unwrap();
    assert_eq!(again, confirmed);
    assert_eq!(service.session(&sid).unwrap().history.len(), 1);

    let restored = service
        .apply_evidence(&sid, "X1", EvidenceAction::Retract)
        .unwrap();
    assert_eq!(restored.posteriors, initial.posteriors);
    assert_eq!(restored.stderr, initial.stderr);
    let state = service.session(&sid).unwrap();
    assert!(state.evidence.is_empty() && !state.stale);
    assert_eq!(state.history.len(), 2);
}

#[test]
fn invalid_evidence_leaves_the_session_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let network = compiled_six_node(&service);
    let sid = session(&service, &network, 1);
    service
        .apply_evidence(&sid, "X2", EvidenceAction::Dismiss)
        .unwrap();
    let before = service.session(&sid).unwrap();

    assert!(matches!(
        service.apply_evidence(&sid, "X2", EvidenceAction::Confirm),
        Err(ServiceError::Inference(
            fmea_bn::InferenceError::ConflictingEvidence { .. }
        ))
    ));
    assert!(matches!(
        service.apply_evidence(&sid, "X9", EvidenceAction::Confirm),
        Err(ServiceError::Inference(
            fmea_bn::InferenceError::UnknownFailure(_)
        ))
    ));
    assert!(matches!(
        service.apply_evidence(&sid, "X2#leak", EvidenceAction::Confirm),
        Err(ServiceError::Inference(_))
    ));
    assert!(matches!(
        service.apply_evidence("ses-missing", "X2", EvidenceAction::Confirm),
        Err(ServiceError::NotFound { .. })
    ));
    assert_eq!(service.session(&sid).unwrap(), before);
}

#[test]
fn zero_leak_collider_explains_away_and_rejects_impossible_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let id = service.ingest(ZERO_LEAK_COLLIDER).unwrap().id;
    let record = service
        .compile(
            &id,
            &CompileRequest {
                force: true,
                ..CompileRequest::default()
            },
        )
        .unwrap();
    let compiled = record.compiled.unwrap();
    assert_eq!(compiled.clamped_leaks(), ["B"]);

    let sid = session(&service, &id, 9);
    service
        .apply_evidence(&sid, "B", EvidenceAction::Confirm)
        .unwrap();
    let report = service
        .apply_evidence(&sid, "A", EvidenceAction::Dismiss)
        .unwrap();
    let evidence =
        Evidence::from_observations([("B", FailureState::Occurred), ("A", FailureState::Absent)])
            .unwrap();
    let exact = exact_posteriors(&compiled, &evidence).unwrap();
    assert_eq!(exact.posteriors["C"], 1.0);
    assert!((report.posteriors["C"] - 1.0).abs() <= 0.01);

    let before = service.session(&sid).unwrap();
    assert!(matches!(
        service.apply_evidence(&sid, "C", EvidenceAction::Dismiss),
        Err(ServiceError::Inference(
            fmea_bn::InferenceError::ImpossibleEvidence
        ))
    ));
    assert_eq!(service.session(&sid).unwrap(), before);
}

#[test]
fn prefill_applies_exactly_the_listed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let network = compiled_six_node(&service);
    let sid = session(&service, &network, 2);

    let before = service.session(&sid).unwrap();
    let noop = service.prefill(&sid, "CELL-2").unwrap();
    assert_eq!(Some(noop), before.cached);
    assert!(service.session(&sid).unwrap().history.is_empty());

    service.prefill(&sid, "CELL-1").unwrap();
    let after = service.session(&sid).unwrap();
    let expected =
        Evidence::from_observations([("X1", FailureState::Occurred), ("X3", FailureState::Absent)])
            .unwrap();
    assert_eq!(after.evidence, expected);
    assert!(after
        .history
        .iter()
        .all(|h| h.cell_id.as_deref() == Some("CELL-1")));

    assert!(matches!(
        service.prefill(&sid, "CELL-9"),
        Err(ServiceError::NotFound { .. })
    ));
    // CELL-3 contradicts CELL-1 on X1
    assert!(matches!(
        service.prefill(&sid, "CELL-3"),
        Err(ServiceError::Inference(_))
    ));
    assert_eq!(service.session(&sid).unwrap().evidence, expected);
}

#[test]
fn history_replay_reproduces_evidence_and_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let network = compiled_six_node(&service);
    let sid = session(&service, &network, 31);
    service
        .apply_evidence(&sid, "X1", EvidenceAction::Confirm)
        .unwrap();
    service
        .apply_evidence(&sid, "X3", EvidenceAction::Dismiss)
        .unwrap();
    service
        .apply_evidence(&sid, "X5", EvidenceAction::Confirm)
        .unwrap();
    service
        .apply_evidence(&sid, "X5", EvidenceAction::Retract)
        .unwrap();
    let original = service.session(&sid).unwrap();
    assert_eq!(replay_history(&original.history), original.evidence);

    let fresh = session(&service, &network, 31);
    for entry in &original.history {
        service
            .apply_evidence(&fresh, &entry.failure_id, entry.action)
            .unwrap();
    }
    let replayed = service.session(&fresh).unwrap();
    assert_eq!(replayed.evidence, original.evidence);
    assert_eq!(replayed.cached, original.cached);
}

#[test]
fn reroll_changes_the_seed_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let service = open(&dir, 0);
    let network = compiled_six_node(&service);
    let sid = session(&service, &network, 3);
    service
        .apply_evidence(&sid, "X1", EvidenceAction::Confirm)
        .unwrap();
    let base = service.session(&sid).unwrap().cached.unwrap();
    let other = service.reroll(&sid, Some(4)).unwrap();
    assert_eq!(other.seed, 4);
    assert_ne!(other.posteriors, base.posteriors);
    let back = service.reroll(&sid, Some(3)).unwrap();
    assert_eq!(back, base);
}

#[test]
fn restart_restores_every_record_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = {
        let service = open(&dir, 1);
        let network = compiled_six_node(&service);
        let sid = session(&service, &network, 8);
        service
            .apply_evidence(&sid, "X1", EvidenceAction::Confirm)
            .unwrap();
        service.prefill(&sid, "CELL-1").unwrap();
        let seeded = synthetic::seeded_inconsistent(2, 10, 15, 2);
        let other = service.ingest(&seeded.network.to_json()).unwrap().id;
        let job = service.submit_recommendation(&other, small_ga(5)).unwrap();
        wait_for_job(&service, &job.id);
        service.snapshot()
    };
    let reopened = open(&dir, 1).snapshot();
    assert_eq!(reopened, snapshot);
    assert_eq!(
        serde_json::to_string(&reopened).unwrap(),
        serde_json::to_string(&snapshot).unwrap()
    );
}

#[test]
fn unfinished_jobs_resume_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (network, job) = {
        let service = open(&dir, 0);
        let seeded = synthetic::seeded_inconsistent(4, 10, 15, 1);
        let network = service.ingest(&seeded.network.to_json()).unwrap().id;
        let job = service
            .submit_recommendation(&network, small_ga(1))
            .unwrap()
            .id;
        assert_eq!(service.job(&job).unwrap().status, JobStatus::Queued);
        (network, job)
    };
    let service = open(&dir, 1);
    let done = wait_for_job(&service, &job);
    assert_eq!(done.status, JobStatus::Done);
    assert!(service.network(&network).unwrap().recommendation.is_some());
}
