//! Fixtures shared by the benchmarks.

use featlab::config::RunConfig;
use featlab::data::sample_dataset;
use featlab::model::init_weights;
use featlab::{Algorithm, Dataset, ModelConfig, Weights};

/// Training set, model config and initial weights at the headline preset.
pub fn preset_problem(seed: u64) -> (Dataset, ModelConfig, Weights) {
    let cfg = RunConfig::standard(Algorithm::Adam).with_seed(seed);
    let ds = sample_dataset(&cfg.data).expect("preset data config is valid");
    let w = init_weights(&cfg.model, cfg.data.d).expect("preset model config is valid");
    (ds, cfg.model, w)
}
