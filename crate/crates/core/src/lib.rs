//! Backtesting pipeline for crossover trading strategies.
//!
//! Data flows `market_data` → `indicators` → `signals` → `engine` →
//! `metrics`, and `report` wires the stages together, serializes the result
//! and renders the dashboard charts.

pub mod batch;
pub mod engine;
pub mod indicators;
pub mod market_data;
pub mod metrics;
pub mod report;
pub mod signals;
