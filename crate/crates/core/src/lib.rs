//! Harness for running cognitive-bias experiments on LLM agents.

pub mod agent;
pub mod config;
pub mod backend;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluators;
pub mod metrics;
pub mod protocols;
pub mod runner;
pub mod topology;
