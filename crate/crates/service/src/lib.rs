//! Service layer for root cause analysis on FMEA networks: persistence,
//! recommendation jobs, diagnosis sessions, and the HTTP API.

pub mod cells;
pub mod error;
pub mod http;
pub mod records;
pub mod service;
pub mod store;

pub use cells::CellTable;
pub use error::ServiceError;
pub use records::{
    ConsistencyStatus, DiagnosisSession, EvidenceAction, JobRecord, JobStatus, NetworkRecord,
};
pub use service::{CompileRequest, Rankings, Service, ServiceConfig, SessionRequest};
