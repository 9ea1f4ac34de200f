//! Simulator for federated learning under reconnecting poisoning attackers,
//! with identity-based identification gating who may rejoin.

pub mod aggregation;
pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod group;
pub mod ibi;
pub mod metrics;
pub mod nn;
pub mod orchestration;
pub mod report;
