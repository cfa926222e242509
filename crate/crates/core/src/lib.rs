//! Forecasting adherence to guided internet-delivered CBT programs from
//! platform login/logout timestamps.
//!
//! The crate covers the full pipeline: session ingestion and synthetic cohort
//! generation ([`sessions`]), adherence labeling ([`adherence`]), daily-usage
//! feature extraction ([`features`]), a compact self-attention classifier with
//! hand-written gradients ([`model`]), training and evaluation protocols
//! ([`train`]), and the evaluation statistics ([`metrics`]).

pub mod adherence;
pub mod features;
pub mod metrics;
pub mod model;
pub mod seeds;
pub mod sessions;
pub mod train;
