//! Core of the structural-health-monitoring stack.
//!
//! The sensing side is an emulated 24-bit sigma-delta ADC ([`adc`]) driven by
//! a firmware state machine ([`firmware`]) that scans up to eight resistive
//! sensors and emits [`wire::TelemetryFrame`]s. The analysis side ingests
//! mechanical-test exports and resistance logs ([`dataset`]) and trains a
//! small feed-forward strain regressor ([`ml`]).

pub mod adc;
pub mod dataset;
pub mod firmware;
pub mod ml;
pub mod wire;
