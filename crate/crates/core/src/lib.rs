pub mod controllers;
pub mod data;
pub mod engine;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod seed;
pub mod space;
