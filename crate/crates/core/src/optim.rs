//! Full-batch GD, Adam and sign gradient descent.
//!
//! Adam follows the plain moment recursions
//!
//! ```text
//! m <- beta1 * m + (1 - beta1) * g
//! v <- beta2 * v + (1 - beta2) * g^2
//! w <- w - eta * m / (sqrt(v) + eps)
//! ```
//!
//! with no bias correction unless [`OptimConfig::bias_correction`] is set.
//! When `sqrt(v) + eps == 0` the coordinate does not move.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::model::{init_weights, regularizer, Evaluation, Gradient, ModelConfig, Weights};
use crate::probes::{self, StepMetrics, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gd,
    Adam,
    SignGd,
}

impl Algorithm {
    /// Adam and sign descent are judged in l1, GD in Frobenius norm.
    pub fn selection_norm(self, grad_l1: f64, grad_fro: f64) -> f64 {
        match self {
            Algorithm::Gd => grad_fro,
            Algorithm::Adam | Algorithm::SignGd => grad_l1,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Gd => "gd",
            Algorithm::Adam => "adam",
            Algorithm::SignGd => "signgd",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(Algorithm::Gd),
            "adam" => Ok(Algorithm::Adam),
            "signgd" | "sign-gd" | "sign_gd" => Ok(Algorithm::SignGd),
            other => Err(invalid(format!(
                "unknown algorithm {other:?} (expected gd, adam or signgd)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl OptimConfig {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-12;

    pub fn new(algorithm: Algorithm, eta: f64) -> Self {
        Self {
            algorithm,
            eta,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            epsilon: Self::DEFAULT_EPSILON,
            bias_correction: false,
        }
    }

    pub fn gd(eta: f64) -> Self {
        Self::new(Algorithm::Gd, eta)
    }

    pub fn adam(eta: f64) -> Self {
        Self::new(Algorithm::Adam, eta)
    }

    pub fn signgd(eta: f64) -> Self {
        Self::new(Algorithm::SignGd, eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.eta)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// `beta2 >= beta1^2`, required for the bounded Adam ratio.
    pub fn has_bounded_ratio(&self) -> bool {
        self.beta2 >= self.beta1 * self.beta1
    }
}

/// Adam moment buffers, entry-aligned with the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    /// Number of completed steps.
    pub t: u64,
    pub moments: Option<Moments>,
}

impl OptState {
    pub fn new(algorithm: Algorithm, len: usize) -> Self {
        let moments = (algorithm == Algorithm::Adam).then(|| Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        Self { t: 0, moments }
    }

    /// The Adam direction `m / (sqrt(v) + eps)` at coordinate `k`, with the
    /// bias correction of `config` applied and `0 / 0 := 0`.
    pub fn adam_ratio(&self, k: usize, config: &OptimConfig) -> f64 {
        let Some(mom) = &self.moments else { return 0.0 };
        let (c1, c2) = bias_factors(self.t, config);
        ratio(mom.m[k] / c1, mom.v[k] / c2, config.epsilon)
    }
}

fn bias_factors(t: u64, config: &OptimConfig) -> (f64, f64) {
    if config.bias_correction && t > 0 {
        let t = t.min(i32::MAX as u64) as i32;
        (1.0 - config.beta1.powi(t), 1.0 - config.beta2.powi(t))
    } else {
        (1.0, 1.0)
    }
}

fn ratio(m: f64, v: f64, eps: f64) -> f64 {
    let denom = v.sqrt() + eps;
    if denom == 0.0 {
        0.0
    } else {
        m / denom
    }
}

pub fn step_gd(w: &mut [f64], g: &[f64], eta: f64) {
    debug_assert_eq!(w.len(), g.len());
    for (x, gk) in w.iter_mut().zip(g) {
        *x -= eta * gk;
    }
}

/// `w <- w - eta * sgn(g)` with `sgn(0) = 0`.
pub fn step_signgd(w: &mut [f64], g: &[f64], eta: f64) {
    debug_assert_eq!(w.len(), g.len());
    for (x, &gk) in w.iter_mut().zip(g) {
        if gk > 0.0 {
            *x -= eta;
        } else if gk < 0.0 {
            *x += eta;
        }
    }
}

pub fn step_adam(w: &mut [f64], state: &mut OptState, g: &[f64], config: &OptimConfig) {
    let len = w.len();
    let mom = state.moments.get_or_insert_with(|| Moments {
        m: vec![0.0; len],
        v: vec![0.0; len],
    });
    debug_assert_eq!(mom.m.len(), len);
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let (c1, c2) = bias_factors(state.t, config);
    for k in 0..len {
        let gk = g[k];
        mom.m[k] = b1 * mom.m[k] + (1.0 - b1) * gk;
        mom.v[k] = b2 * mom.v[k] + (1.0 - b2) * gk * gk;
        w[k] -= config.eta * ratio(mom.m[k] / c1, mom.v[k] / c2, config.epsilon);
    }
}

/// A configured optimizer with its state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub state: OptState,
}

impl Optimizer {
    pub fn new(config: OptimConfig, len: usize) -> Self {
        let state = OptState::new(config.algorithm, len);
        Self { config, state }
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64]) {
        match self.config.algorithm {
            Algorithm::Gd => {
                step_gd(w, g, self.config.eta);
                self.state.t += 1;
            }
            Algorithm::SignGd => {
                step_signgd(w, g, self.config.eta);
                self.state.t += 1;
            }
            Algorithm::Adam => step_adam(w, &mut self.state, g, &self.config),
        }
    }
}

/// When the training loop records probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeSchedule {
    /// Record every this many iterations; 0 disables recording.
    pub probe_every: usize,
    /// Attach test error at probe points that are multiples of this; 0
    /// disables it.
    pub test_every: usize,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            probe_every: 10,
            test_every: 500,
        }
    }
}

impl ProbeSchedule {
    fn probes(&self, t: usize) -> bool {
        self.probe_every > 0 && t.is_multiple_of(self.probe_every)
    }

    fn tests(&self, t: usize) -> bool {
        self.test_every > 0 && t.is_multiple_of(self.test_every)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    /// Number of optimizer steps `T`.
    pub steps: usize,
    pub schedule: ProbeSchedule,
    /// The smallest-gradient iterate is searched over
    /// `t >= floor(best_after * T)`. Iterates near the origin have tiny
    /// gradients because the origin is stationary, so the early part of the
    /// run is excluded.
    pub best_after: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 10_000,
            schedule: ProbeSchedule::default(),
            best_after: 0.5,
        }
    }
}

/// Everything the observer sees after step `iter` was applied.
pub struct StepView<'a> {
    pub iter: usize,
    pub loss: f64,
    /// Gradient at the pre-step weights `W^{(iter)}`.
    pub gradient: &'a Gradient,
    /// Optimizer state after absorbing `gradient`.
    pub optimizer: &'a Optimizer,
    /// Weights after the step.
    pub weights: &'a Weights,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_weights: Weights,
    /// The iterate with the smallest gradient norm in the search window.
    pub best_weights: Weights,
    pub best_iter: usize,
    pub best_grad_l1: f64,
    pub best_grad_fro: f64,
    /// Probes at `W^{(0)}` and at `W^{(T)}`, regardless of schedule.
    pub initial: TrajectoryRecord,
    pub last: TrajectoryRecord,
    /// Scheduled records for `t < T`.
    pub records: Vec<TrajectoryRecord>,
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    model: &'a ModelConfig,
    optim: &'a OptimConfig,
    options: TrainOptions,
    test_set: Option<&'a Dataset>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, model: &'a ModelConfig, optim: &'a OptimConfig, options: TrainOptions) -> Self {
        Self {
            dataset,
            model,
            optim,
            options,
            test_set: None,
        }
    }

    pub fn with_test_set(mut self, test_set: &'a Dataset) -> Self {
        self.test_set = Some(test_set);
        self
    }

    /// Train from the seeded initialization of the model config.
    pub fn run(&self) -> Result<TrainOutcome> {
        let init = init_weights(self.model, self.dataset.dim())?;
        self.run_from(init, |_| {})
    }

    pub fn run_from(&self, init: Weights, mut observe: impl FnMut(&StepView<'_>)) -> Result<TrainOutcome> {
        self.model.validate()?;
        self.optim.validate()?;
        if init.width() != self.model.m {
            return Err(Error::DimensionMismatch {
                expected: self.model.m,
                found: init.width(),
            });
        }
        let (q, lambda) = (self.model.q, self.model.lambda);
        let steps = self.options.steps;
        let window_start = ((self.options.best_after.clamp(0.0, 1.0) * steps as f64).floor() as usize).min(steps);

        let mut w = init;
        let mut optimizer = Optimizer::new(self.optim.clone(), w.as_slice().len());
        let mut records = Vec::new();
        let mut best: Option<(f64, usize, f64, f64, Weights)> = None;
        let mut initial = None;

        for t in 0..=steps {
            let eval = Evaluation::new(&w, self.dataset, q)?;
            let reg_term = regularizer(&w, lambda);
            let loss = eval.data_loss(self.dataset) + reg_term;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", iter: t });
            }
            let grad = eval.gradient(&w, self.dataset, lambda);
            if !grad.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    iter: t,
                });
            }
            let (grad_l1, grad_fro) = (grad.l1(), grad.frobenius());
            let metrics = StepMetrics {
                iter: t,
                loss,
                reg_term,
                grad_l1,
                grad_fro,
            };

            let norm = self.optim.algorithm.selection_norm(grad_l1, grad_fro);
            if t >= window_start && best.as_ref().is_none_or(|b| norm < b.0) {
                best = Some((norm, t, grad_l1, grad_fro, w.clone()));
            }

            let is_end = t == steps;
            if t == 0 || is_end || self.options.schedule.probes(t) {
                let test_error = match self.test_set {
                    Some(test) if t == 0 || is_end || self.options.schedule.tests(t) => {
                        Some(Evaluation::new(&w, test, q)?.error_rate(test))
                    }
                    _ => None,
                };
                let rec = probes::record(&w, &eval, self.dataset, metrics, test_error)?;
                if !is_end && self.options.schedule.probes(t) {
                    let mut scheduled = rec.clone();
                    if !self.options.schedule.tests(t) {
                        scheduled.test_error = None;
                    }
                    records.push(scheduled);
                }
                if t == 0 {
                    initial = Some(rec.clone());
                }
                if is_end {
                    let (_, best_iter, best_grad_l1, best_grad_fro, best_weights) =
                        best.take().expect("window is never empty");
                    return Ok(TrainOutcome {
                        final_weights: w,
                        best_weights,
                        best_iter,
                        best_grad_l1,
                        best_grad_fro,
                        initial: initial.expect("recorded at t = 0"),
                        last: rec,
                        records,
                    });
                }
            }

            optimizer.step(w.as_mut_slice(), grad.as_slice());
            observe(&StepView {
                iter: t,
                loss,
                gradient: &grad,
                optimizer: &optimizer,
                weights: &w,
            });
        }
        unreachable!("the loop returns at t == steps")
    }
}
