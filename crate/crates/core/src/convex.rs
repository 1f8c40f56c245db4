//! Logistic regression on the flattened two-patch input.
//!
//! The objective `(1/n) sum log(1 + exp(-y <w, x>)) + (lambda/2) |w|^2` is
//! `lambda`-strongly convex, so GD and Adam driven to small gradients land
//! near the same minimizer and predict alike.

use crate::data::{Dataset, Example, Label, PatchOrder};
use crate::error::{invalid, Error, Result};
use crate::model::{sigmoid, softplus};
use crate::optim::{step_adam, step_gd, Algorithm, OptState, OptimConfig};

/// A weight vector of length `2d` acting on `[x1; x2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexModel {
    d: usize,
    w: Vec<f64>,
}

impl ConvexModel {
    pub fn zeros(d: usize) -> Self {
        Self { d, w: vec![0.0; 2 * d] }
    }

    pub fn from_vec(d: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                found: w.len(),
            });
        }
        Ok(Self { d, w })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn norm(&self) -> f64 {
        norm(&self.w)
    }

    pub fn distance(&self, other: &ConvexModel) -> f64 {
        self.w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Offsets of the feature and noise halves for `order`.
    fn offsets(&self, order: PatchOrder) -> (usize, usize) {
        match order {
            PatchOrder::FeatureFirst => (0, self.d),
            PatchOrder::NoiseFirst => (self.d, 0),
        }
    }

    /// `<w, x>`.
    pub fn score(&self, example: &Example) -> f64 {
        let (f, n) = self.offsets(example.patch_order);
        example.feature_dot(&self.w[f..f + self.d]) + example.noise_dot(&self.w[n..n + self.d])
    }

    /// Add `c * x` into `out`.
    fn axpy_input(&self, out: &mut [f64], example: &Example, c: f64) {
        let (f, n) = self.offsets(example.patch_order);
        out[f] += c * example.label.sign();
        out[n] += c * example.noise_first;
        for (&k, &val) in example.support.iter().zip(&example.values) {
            out[n + k as usize] += c * val;
        }
    }

    pub fn predict(&self, example: &Example) -> Option<Label> {
        let z = self.score(example);
        if z > 0.0 {
            Some(Label::Pos)
        } else if z < 0.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }

    /// Fraction of examples with `y <w, x> <= 0`.
    pub fn error_rate(&self, dataset: &Dataset) -> f64 {
        if dataset.is_empty() {
            return 0.0;
        }
        let wrong = dataset
            .examples
            .iter()
            .filter(|e| e.label.sign() * self.score(e) <= 0.0)
            .count();
        wrong as f64 / dataset.len() as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check(w: &ConvexModel, dataset: &Dataset) -> Result<()> {
    if w.d != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.d,
            found: dataset.dim(),
        });
    }
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    Ok(())
}

fn loss_and_gradient_unchecked(w: &ConvexModel, dataset: &Dataset, lambda: f64) -> (f64, Vec<f64>) {
    let n = dataset.len() as f64;
    let mut grad: Vec<f64> = w.w.iter().map(|x| lambda * x).collect();
    let mut data_loss = 0.0;
    for e in &dataset.examples {
        let margin = e.label.sign() * w.score(e);
        data_loss += softplus(-margin);
        w.axpy_input(&mut grad, e, -e.label.sign() * sigmoid(-margin) / n);
    }
    let reg = 0.5 * lambda * w.w.iter().map(|x| x * x).sum::<f64>();
    (data_loss / n + reg, grad)
}

/// Objective value and its analytic gradient. Requires `lambda > 0`.
pub fn convex_loss_and_gradient(w: &ConvexModel, dataset: &Dataset, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("convex lab needs lambda > 0, got {lambda}")));
    }
    check(w, dataset)?;
    Ok(loss_and_gradient_unchecked(w, dataset, lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexLabConfig {
    pub lambda: f64,
    pub eta_gd: f64,
    pub eta_adam: f64,
    /// Step budget per optimizer.
    pub steps: usize,
    /// Stop an optimizer once its gradient norm is at most this.
    pub tol: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Trajectory sampling period; 0 disables trajectories.
    pub trajectory_every: usize,
    pub test_size: usize,
}

impl Default for ConvexLabConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            eta_gd: 1.0,
            eta_adam: 1e-4,
            steps: 300_000,
            tol: Some(1e-7),
            beta1: OptimConfig::DEFAULT_BETA1,
            beta2: OptimConfig::DEFAULT_BETA2,
            epsilon: OptimConfig::DEFAULT_EPSILON,
            trajectory_every: 0,
            test_size: 10_000,
        }
    }
}

impl ConvexLabConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("convex lab needs lambda > 0, got {}", self.lambda)));
        }
        if let Some(tol) = self.tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(invalid(format!("tol must be positive, got {tol}")));
            }
        }
        self.optim(Algorithm::Gd).validate()?;
        self.optim(Algorithm::Adam).validate()
    }

    fn optim(&self, algorithm: Algorithm) -> OptimConfig {
        let eta = match algorithm {
            Algorithm::Adam => self.eta_adam,
            _ => self.eta_gd,
        };
        OptimConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            ..OptimConfig::new(algorithm, eta)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// One optimizer's result. `model` is the smallest-gradient iterate seen.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexRun {
    pub algorithm: Algorithm,
    pub model: ConvexModel,
    pub best_iter: usize,
    pub steps_taken: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub train_error: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

pub fn train_convex(
    dataset: &Dataset,
    init: &ConvexModel,
    algorithm: Algorithm,
    config: &ConvexLabConfig,
) -> Result<ConvexRun> {
    config.validate()?;
    check(init, dataset)?;
    let optim = config.optim(algorithm);
    let mut w = init.clone();
    let mut state = OptState::new(algorithm, w.w.len());
    let mut best: Option<(f64, f64, usize, ConvexModel)> = None;
    let mut trajectory = Vec::new();
    let mut t = 0;
    loop {
        let (loss, grad) = loss_and_gradient_unchecked(&w, dataset, config.lambda);
        let gn = norm(&grad);
        if !loss.is_finite() || !gn.is_finite() {
            return Err(Error::NonFinite {
                what: "convex loss",
                iter: t,
            });
        }
        if config.trajectory_every > 0 && t % config.trajectory_every == 0 {
            trajectory.push(TrajectoryPoint {
                iter: t,
                loss,
                grad_norm: gn,
            });
        }
        if best.as_ref().is_none_or(|b| gn < b.1) {
            best = Some((loss, gn, t, w.clone()));
        }
        if t == config.steps || config.tol.is_some_and(|tol| gn <= tol) {
            break;
        }
        match algorithm {
            Algorithm::Adam => step_adam(&mut w.w, &mut state, &grad, &optim),
            Algorithm::Gd => step_gd(&mut w.w, &grad, optim.eta),
            Algorithm::SignGd => return Err(invalid("convex lab runs GD and Adam only")),
        }
        t += 1;
    }
    let (loss, grad_norm, best_iter, model) = best.expect("at least one iterate is evaluated");
    Ok(ConvexRun {
        algorithm,
        train_error: model.error_rate(dataset),
        model,
        best_iter,
        steps_taken: t,
        loss,
        grad_norm,
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub lambda: f64,
    pub gd: ConvexRun,
    pub adam: ConvexRun,
    pub distance: f64,
    /// `(|grad_adam| + |grad_gd|) / lambda`.
    pub distance_bound: f64,
    pub gd_norm: f64,
    pub test_size: usize,
    pub test_disagreement: f64,
    pub gd_test_error: f64,
    pub adam_test_error: f64,
}

impl EquivalenceReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![("lambda".to_string(), self.lambda.to_string())];
        for run in [&self.gd, &self.adam] {
            let p = run.algorithm.to_string();
            kv.push((format!("{p}.steps"), run.steps_taken.to_string()));
            kv.push((format!("{p}.best_iter"), run.best_iter.to_string()));
            kv.push((format!("{p}.loss"), run.loss.to_string()));
            kv.push((format!("{p}.grad_norm"), run.grad_norm.to_string()));
            kv.push((format!("{p}.train_error"), run.train_error.to_string()));
        }
        kv.extend([
            ("gd.test_error".to_string(), self.gd_test_error.to_string()),
            ("adam.test_error".to_string(), self.adam_test_error.to_string()),
            ("distance".to_string(), self.distance.to_string()),
            ("distance_bound".to_string(), self.distance_bound.to_string()),
            ("gd.norm".to_string(), self.gd_norm.to_string()),
            ("test_size".to_string(), self.test_size.to_string()),
            ("test_disagreement".to_string(), self.test_disagreement.to_string()),
        ]);
        kv
    }
}

/// Fraction of `test` on which the two models predict different signs.
pub fn disagreement(a: &ConvexModel, b: &ConvexModel, test: &Dataset) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let differ = test.examples.iter().filter(|e| a.predict(e) != b.predict(e)).count();
    differ as f64 / test.len() as f64
}

/// Train GD and Adam concurrently from the zero vector and compare them.
pub fn run_equivalence_experiment(
    train: &Dataset,
    test: &Dataset,
    config: &ConvexLabConfig,
) -> Result<EquivalenceReport> {
    config.validate()?;
    let init = ConvexModel::zeros(train.dim());
    let (gd, adam) = rayon::join(
        || train_convex(train, &init, Algorithm::Gd, config),
        || train_convex(train, &init, Algorithm::Adam, config),
    );
    let (gd, adam) = (gd?, adam?);
    Ok(EquivalenceReport {
        lambda: config.lambda,
        distance: adam.model.distance(&gd.model),
        distance_bound: (adam.grad_norm + gd.grad_norm) / config.lambda,
        gd_norm: gd.model.norm(),
        test_size: test.len(),
        test_disagreement: disagreement(&gd.model, &adam.model, test),
        gd_test_error: gd.model.error_rate(test),
        adam_test_error: adam.model.error_rate(test),
        gd,
        adam,
    })
}
