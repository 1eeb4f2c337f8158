//! Domain-restricted retrieval pipeline and the therapist/supervisor agent
//! protocol built on top of it.

pub mod agent;
pub mod ingest;
pub mod llm;
pub mod retrieval;
