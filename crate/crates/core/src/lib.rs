//! Diagnostics for the gap between prompt-based and probe-based time-series
//! classification with (vision-)language models.

pub mod baselines;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod model_bridge;
pub mod plot;
pub mod probes;
pub mod prompting;
pub mod represent;
