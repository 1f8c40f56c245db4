//! Experiment orchestration: one seeded run, the Adam/GD error table and the
//! trajectory pair used for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{sample_dataset, sample_test_set, Dataset, Label};
use crate::error::{invalid, Result};
use crate::io::{save_weights, write_key_values, write_metrics};
use crate::model::{init_weights, Evaluation};
use crate::optim::{Algorithm, StepView, TrainOutcome, Trainer};
use crate::oracles::{closeness_audit, AuditThresholds, ClosenessReport, AUDIT_BINS};
use crate::probes::{detect_flip, TrajectoryRecord, DEFAULT_FLIP_RUN};
use crate::rng::GENERATOR;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub final_train_error: f64,
    pub final_test_error: Option<f64>,
    pub final_grad_l1: f64,
    pub final_grad_fro: f64,
    pub best_iter: usize,
    pub best_train_error: f64,
    pub best_test_error: Option<f64>,
    pub best_grad_l1: f64,
    pub best_grad_fro: f64,
    /// First sustained decrease of `Lambda_{+1}`.
    pub flip_iter: Option<usize>,
    /// `sigma_0 / (eta s sigma_p alpha^{1/(q-1)})`, the order of magnitude
    /// of the flip time for sign-like updates, up to log factors.
    pub flip_scale: f64,
    pub wall_time_secs: f64,
    pub config: RunConfig,
}

impl RunSummary {
    /// `summary.*` entries followed by the full configuration echo. The
    /// result parses as a configuration that reruns the experiment.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut kv: Vec<(String, String)> = [
            ("run_id", self.run_id.clone()),
            ("algorithm", self.config.optim.algorithm.to_string()),
            ("train_error_final", self.final_train_error.to_string()),
            ("test_error_final", opt(self.final_test_error)),
            ("grad_l1_final", self.final_grad_l1.to_string()),
            ("grad_fro_final", self.final_grad_fro.to_string()),
            ("best_iter", self.best_iter.to_string()),
            ("train_error_best", self.best_train_error.to_string()),
            ("test_error_best", opt(self.best_test_error)),
            ("grad_l1_best", self.best_grad_l1.to_string()),
            ("grad_fro_best", self.best_grad_fro.to_string()),
            ("flip_iter", self.flip_iter.map_or_else(String::new, |t| t.to_string())),
            ("flip_scale", self.flip_scale.to_string()),
            ("wall_time_secs", self.wall_time_secs.to_string()),
            ("generator", GENERATOR.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("summary.{k}"), v))
        .collect();
        kv.extend(self.config.key_values().into_iter().map(|(k, v)| (k.to_string(), v)));
        kv
    }
}

pub fn flip_scale(config: &RunConfig) -> f64 {
    let (d, m) = (&config.data, &config.model);
    m.sigma_0 / (config.optim.eta * d.s as f64 * d.sigma_p * d.alpha.powf(1.0 / (m.q as f64 - 1.0)))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub outcome: TrainOutcome,
}

impl RunOutput {
    /// Scheduled records followed by the record at `T`.
    pub fn trajectory(&self) -> Vec<TrajectoryRecord> {
        let mut all = self.outcome.records.clone();
        if all.last().is_none_or(|r| r.iter < self.outcome.last.iter) {
            all.push(self.outcome.last.clone());
        }
        all
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<RunOutput> {
    run_experiment_with(config, |_| {})
}

/// Sample the data, train, and evaluate `W^{(T)}` and `W*` on a fresh test
/// set. `observe` sees every step.
pub fn run_experiment_with(config: &RunConfig, observe: impl FnMut(&StepView<'_>)) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let train = sample_dataset(&config.data)?;
    let test = (config.test_size > 0)
        .then(|| sample_test_set(&config.data, config.test_size))
        .transpose()?;
    let mut trainer = Trainer::new(&train, &config.model, &config.optim, config.train_options());
    if let Some(test) = &test {
        trainer = trainer.with_test_set(test);
    }
    let init = init_weights(&config.model, config.data.d)?;
    let outcome = trainer.run_from(init, observe)?;
    let summary = summarize(config, &train, test.as_ref(), &outcome, start.elapsed().as_secs_f64())?;
    Ok(RunOutput { summary, outcome })
}

fn summarize(
    config: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    outcome: &TrainOutcome,
    wall_time_secs: f64,
) -> Result<RunSummary> {
    let q = config.model.q;
    let best_eval = Evaluation::new(&outcome.best_weights, train, q)?;
    let best_test_error = match test {
        Some(t) => Some(Evaluation::new(&outcome.best_weights, t, q)?.error_rate(t)),
        None => None,
    };
    let mut trajectory = outcome.records.clone();
    trajectory.push(outcome.last.clone());
    Ok(RunSummary {
        run_id: config.resolved_run_id(),
        final_train_error: outcome.last.train_error,
        final_test_error: outcome.last.test_error,
        final_grad_l1: outcome.last.grad_l1,
        final_grad_fro: outcome.last.grad_fro,
        best_iter: outcome.best_iter,
        best_train_error: best_eval.error_rate(train),
        best_test_error,
        best_grad_l1: outcome.best_grad_l1,
        best_grad_fro: outcome.best_grad_fro,
        flip_iter: detect_flip(&trajectory, Label::Pos, DEFAULT_FLIP_RUN),
        flip_scale: flip_scale(config),
        wall_time_secs,
        config: config.clone(),
    })
}

/// Write `metrics.csv`, `summary.txt`, `weights_final.txt` and
/// `weights_best.txt` into `dir`.
pub fn write_run(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics(&output.outcome.records, &dir.join("metrics.csv"))?;
    write_key_values(&output.summary.key_values(), &dir.join("summary.txt"))?;
    let model = &output.summary.config.model;
    save_weights(&output.outcome.final_weights, model, &dir.join("weights_final.txt"))?;
    save_weights(&output.outcome.best_weights, model, &dir.join("weights_best.txt"))?;
    Ok(())
}

/// An Adam run with [`closeness_audit`] applied after every step. The
/// returned report aggregates all steps.
pub fn run_with_closeness_audit(
    config: &RunConfig,
    thresholds: &AuditThresholds,
) -> Result<(RunOutput, ClosenessReport)> {
    if config.optim.algorithm != Algorithm::Adam {
        return Err(invalid("the closeness audit needs an Adam run"));
    }
    let mut total = ClosenessReport {
        coordinates: 0,
        large: 0,
        sign_matches: 0,
        max_ratio: 0.0,
        bound: 0.0,
        histogram: [0; AUDIT_BINS + 1],
    };
    let mut failure = None;
    let output = run_experiment_with(config, |view| {
        if failure.is_some() {
            return;
        }
        match closeness_audit(
            &view.optimizer.state,
            view.gradient.as_slice(),
            &view.optimizer.config,
            thresholds,
        ) {
            Ok(step) => {
                total.bound = step.bound;
                total.merge(&step);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok((output, total)),
    }
}

#[derive(Clone, Debug)]
pub struct Table1Row {
    pub seed: u64,
    pub adam: RunSummary,
    pub gd: RunSummary,
}

/// Adam and GD at `base` for each seed, all runs in parallel. Errors are
/// reported at `W*`.
pub fn repro_table1(base: &RunConfig, seeds: &[u64]) -> Result<Vec<Table1Row>> {
    let jobs: Vec<(u64, Algorithm)> = seeds
        .iter()
        .flat_map(|&s| [(s, Algorithm::Adam), (s, Algorithm::Gd)])
        .collect();
    let results: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(seed, alg)| {
            let mut cfg = base.clone().with_seed(seed);
            cfg.set("optim.algorithm", &alg.to_string())?;
            Ok(run_experiment(&cfg)?.summary)
        })
        .collect::<Result<_>>()?;
    let mut it = results.into_iter();
    Ok(seeds
        .iter()
        .map(|&seed| {
            let adam = it.next().expect("one adam run per seed");
            let gd = it.next().expect("one gd run per seed");
            Table1Row { seed, adam, gd }
        })
        .collect())
}

pub fn render_table1(rows: &[Table1Row]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let mut out = String::from("| seed | metric | Adam | GD |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | training error | {} | {} |",
            r.seed,
            cell(Some(r.adam.best_train_error)),
            cell(Some(r.gd.best_train_error))
        );
        let _ = writeln!(
            out,
            "| {} | test error | {} | {} |",
            r.seed,
            cell(r.adam.best_test_error),
            cell(r.gd.best_test_error)
        );
    }
    out
}

/// Adam and GD trajectories for one configuration, written under
/// `out_dir/<run id>`. Returns the two run directories.
pub fn repro_fig3(base: &RunConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let cfg_for = |alg: Algorithm| -> Result<RunConfig> {
        let mut cfg = base.clone();
        cfg.set("optim.algorithm", &alg.to_string())?;
        cfg.run_id = format!("fig3-{}-seed{}", alg, cfg.data.seed);
        Ok(cfg)
    };
    let (adam_cfg, gd_cfg) = (cfg_for(Algorithm::Adam)?, cfg_for(Algorithm::Gd)?);
    let (adam, gd) = rayon::join(|| run_experiment(&adam_cfg), || run_experiment(&gd_cfg));
    let (adam, gd) = (adam?, gd?);
    let adam_dir = out_dir.join(adam_cfg.resolved_run_id());
    let gd_dir = out_dir.join(gd_cfg.resolved_run_id());
    write_run(&adam, &adam_dir)?;
    write_run(&gd, &gd_dir)?;
    Ok((adam_dir, gd_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_metrics, read_key_values};

    fn tiny(algorithm: Algorithm) -> RunConfig {
        let mut c = RunConfig::standard(algorithm).with_seed(1);
        c.apply_text("data.d = 40\ndata.n = 8\ndata.s = 5\nmodel.m = 3\nrun.T = 30\nrun.test_size = 50\nrun.probe_every = 5\nrun.test_every = 10\n")
            .unwrap();
        c
    }

    #[test]
    fn zero_steps_report_initialization() {
        let mut c = tiny(Algorithm::Gd);
        c.steps = 0;
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.outcome.initial, out.outcome.last);
        assert_eq!(out.summary.best_iter, 0);
        assert_eq!(out.summary.final_train_error, out.outcome.initial.train_error);
        assert_eq!(out.summary.best_test_error, out.summary.final_test_error);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = tiny(Algorithm::Adam);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.outcome.records, b.outcome.records);
        assert_eq!(a.outcome.best_weights, b.outcome.best_weights);
    }

    #[test]
    fn write_run_produces_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny(Algorithm::Adam)).unwrap();
        write_run(&out, dir.path()).unwrap();
        let records = load_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(records, out.outcome.records);
        assert_eq!(records.len(), 6);
        let kv = read_key_values(&dir.path().join("summary.txt")).unwrap();
        assert!(kv.iter().any(|(k, v)| k == "summary.algorithm" && v == "adam"));
        let mut rerun = RunConfig::standard(Algorithm::Gd);
        rerun.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(rerun, out.summary.config);
        assert!(dir.path().join("weights_best.txt").exists());
    }

    #[test]
    fn table_has_one_row_per_seed() {
        let rows = repro_table1(&tiny(Algorithm::Gd), &[1, 2]).unwrap();
        assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(rows[0].adam.config.optim.algorithm, Algorithm::Adam);
        assert_eq!(rows[1].gd.config.data.seed, 2);
        let table = render_table1(&rows);
        assert_eq!(table.lines().count(), 2 + 4);
    }

    #[test]
    fn audited_run_respects_ratio_bound() {
        let c = tiny(Algorithm::Adam);
        let (_, report) = run_with_closeness_audit(&c, &AuditThresholds::for_config(&c.optim)).unwrap();
        assert_eq!(report.coordinates, 30 * 2 * 3 * 40);
        assert!(report.within_bound());
        assert!(run_with_closeness_audit(&tiny(Algorithm::Gd), &AuditThresholds { large_gradient: 1.0 }).is_err());
    }

    #[test]
    fn flip_scale_at_preset() {
        let c = RunConfig::standard(Algorithm::Adam);
        let expect = 0.01 / (5e-5 * 100.0 * 0.1 * 0.2f64.sqrt());
        assert!((flip_scale(&c) - expect).abs() < 1e-9);
    }
}
