pub mod config;
pub mod metrics;
pub mod scenario;
pub mod trace;
pub mod world;
