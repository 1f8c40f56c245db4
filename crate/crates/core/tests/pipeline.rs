//! End-to-end checks through the public API on small problems, plus frozen
//! oracle values.

use featlab::config::RunConfig;
use featlab::data::{sample_dataset, DataConfig};
use featlab::io::{load_dataset, load_metrics, load_weights, read_key_values, save_dataset};
use featlab::model::{gradient, init_weights, loss, ModelConfig};
use featlab::oracles::{adam_ratio_bound, tensor_power_sim, TensorPowerParams};
use featlab::probes::{classification_error, feature_alignment, noise_memorization, Aggregate};
use featlab::runner::{run_experiment, write_run};
use featlab::{Algorithm, Label, Weights};

fn tiny(algorithm: Algorithm) -> RunConfig {
    let mut c = RunConfig::standard(algorithm).with_seed(3);
    c.apply_text(
        "data.d = 60\ndata.n = 10\ndata.s = 6\nmodel.m = 4\nrun.T = 40\nrun.test_size = 100\nrun.probe_every = 10\nrun.test_every = 20\n",
    )
    .unwrap();
    c
}

#[test]
fn zero_weights_everywhere() {
    let ds = sample_dataset(&tiny(Algorithm::Gd).data).unwrap();
    let w = Weights::zeros(60, 4);
    assert_eq!(classification_error(&w, &ds, 3).unwrap(), 1.0);
    for j in Label::BOTH {
        assert_eq!(feature_alignment(&w, j), 0.0);
        assert_eq!(noise_memorization(&w, &ds, j, Aggregate::Max).unwrap(), 0.0);
        assert_eq!(noise_memorization(&w, &ds, j, Aggregate::Min).unwrap(), 0.0);
    }
    assert!((loss(&w, &ds, 3, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
    // The origin is stationary for q >= 3.
    assert_eq!(gradient(&w, &ds, 3, 1e-3).unwrap().l1(), 0.0);
}

#[test]
fn run_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Algorithm::Adam);
    let out = run_experiment(&cfg).unwrap();
    write_run(&out, dir.path()).unwrap();

    assert_eq!(
        load_metrics(&dir.path().join("metrics.csv")).unwrap(),
        out.outcome.records
    );
    let (w, model) = load_weights(&dir.path().join("weights_best.txt")).unwrap();
    assert_eq!(w, out.outcome.best_weights);
    assert_eq!(model, cfg.model);

    let kv = read_key_values(&dir.path().join("summary.txt")).unwrap();
    let mut again = RunConfig::standard(Algorithm::Gd);
    again.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
    let rerun = run_experiment(&again).unwrap();
    assert_eq!(rerun.outcome.final_weights, out.outcome.final_weights);
    assert_eq!(rerun.summary.best_test_error, out.summary.best_test_error);
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample_dataset(&DataConfig {
        seed: 5,
        ..tiny(Algorithm::Gd).data
    })
    .unwrap();
    let path = dir.path().join("train.txt");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn adam_and_gd_share_data_and_init() {
    let a = run_experiment(&tiny(Algorithm::Adam)).unwrap();
    let g = run_experiment(&tiny(Algorithm::Gd)).unwrap();
    assert_eq!(a.outcome.initial.lambda_plus, g.outcome.initial.lambda_plus);
    assert_eq!(a.outcome.initial.gamma_min_minus, g.outcome.initial.gamma_min_minus);
    assert_eq!(a.outcome.initial.test_error, g.outcome.initial.test_error);
}

#[test]
fn init_is_independent_of_run_length() {
    let model = ModelConfig {
        seed: 9,
        ..ModelConfig::standard()
    };
    let mut short = tiny(Algorithm::Gd);
    short.steps = 0;
    short.model.seed = 9;
    let out = run_experiment(&short).unwrap();
    assert_eq!(
        out.outcome.final_weights,
        init_weights(&ModelConfig { m: 4, ..model }, 60).unwrap()
    );
}

#[test]
fn frozen_ratio_bound() {
    // (1 - 0.9) / sqrt(0.01 * (1 - 0.81 / 0.99)) = 0.1 / sqrt(0.01 * 0.18 / 0.99)
    let expect = 0.1 / (0.01f64 * 0.18 / 0.99).sqrt();
    let got = adam_ratio_bound(0.9, 0.99).unwrap();
    assert!((got - expect).abs() < 1e-14);
    assert!((got - 2.3452078799117135).abs() < 1e-14);
}

#[test]
fn frozen_tensor_power_crossings() {
    // Continuous limit for q = 3: dx/dt = eta x^2 reaches 1 at t eta = 1/x0 - 1.
    for (x0, frozen) in [(0.02, 49_004u64), (0.04, 24_004), (0.08, 11_503)] {
        let out = tensor_power_sim(&TensorPowerParams::reference(x0)).unwrap();
        assert_eq!(out.t_x, frozen);
        let continuous = (1.0 / x0 - 1.0) / 1e-3;
        assert!((out.t_x as f64 - continuous).abs() / continuous < 0.01);
    }
}
