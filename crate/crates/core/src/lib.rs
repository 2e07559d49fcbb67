//! Synthetic forearm-ultrasound hand tracking: data generation, frame
//! preprocessing, configuration classification (linear SVC) and per-finger
//! MCP flexion regression (CNN).

pub mod binio;
pub mod cnn;
pub mod kinematics;
pub mod metrics;
pub mod preprocess;
pub mod split;
pub mod svc;
pub mod synthgen;
pub mod kv;
pub mod pipeline;
pub mod config;
pub mod cli;
