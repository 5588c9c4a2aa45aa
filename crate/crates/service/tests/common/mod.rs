#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use fmea_rca::{JobRecord, Service, ServiceConfig};

/// A and C cause B with trigger 0.4. B's class is far below what its causes
/// imply, so a forced compile clamps its leak to exactly zero.
pub const ZERO_LEAK_COLLIDER: &str = r#"{
  "nodes": [
    {"id": "A", "name": "cause a", "process_step": "press", "occurrence_class": 10},
    {"id": "C", "name": "cause c", "process_step": "press", "occurrence_class": 10},
    {"id": "B", "name": "effect b", "process_step": "test", "occurrence_class": 9}
  ],
  "edges": [
    {"cause": "A", "effect": "B", "trigger_probability": 0.4},
    {"cause": "C", "effect": "B", "trigger_probability": 0.4}
  ]
}"#;

pub const CELLS_CSV: &str = "cell_id,failure_id,state\n\
                             CELL-1,X1,occurred\n\
                             CELL-1,X3,absent\n\
                             CELL-2,,\n\
                             CELL-3,X1,absent\n";

pub fn config(dir: &Path, workers: usize) -> ServiceConfig {
    let mut config = ServiceConfig::new(dir);
    config.samples = 20_000;
    config.workers = workers;
    config.cells = Some(fmea_rca::CellTable::from_reader(CELLS_CSV.as_bytes()).unwrap());
    config
}

pub fn wait_for_job(service: &Service, id: &str) -> JobRecord {
    let start = Instant::now();
    loop {
        let job = service.job(id).unwrap();
        if job.is_finished() {
            return job;
        }
        assert!(
            start.elapsed() < Duration::from_secs(120),
            "job {id} did not finish"
        );
        std::thread::sleep(Duration::from_millis(20));
    }
}
